use std::fs;

use nlprompt_core::noise::{NoiseKind, NoiseSpec};
use nlprompt_harness::embedding::{
    load_features, load_matrix, parse_header, save_features, save_matrix, save_sidecar, HEADER_LEN,
};
use nlprompt_harness::synth::make_synthetic_embeddings;
use nlprompt_harness::HarnessError;

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

fn noisy_dataset() -> nlprompt_core::LabeledDataset<f64> {
    let s = make_synthetic_embeddings(4, 5, 12, 1.5, 21).unwrap();
    s.dataset
        .with_noise(&NoiseSpec::new(NoiseKind::Symmetric, 0.4, 3))
        .unwrap()
}

#[test]
fn binary_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.bin");
    let ds = noisy_dataset();
    save_features(&path, &ds).unwrap();
    let back = load_features(&path).unwrap();
    assert_eq!(bits(back.features.as_slice()), bits(ds.features.as_slice()));
    assert_eq!(back.observed_labels, ds.observed_labels);
    assert_eq!(back.true_labels, ds.true_labels);
    assert_eq!(back.class_count, 4);
    assert!(back.features.is_normalized());
    let bytes = fs::read(&path).unwrap();
    assert_eq!(bytes.len(), HEADER_LEN + 20 * 12 * 4 + 2 * 20 * 4);
    let header = parse_header(&bytes).unwrap();
    assert_eq!((header.count, header.dim, header.class_count), (20, 12, 4));
    assert_eq!(
        (header.dtype.as_str(), header.endianness.as_str()),
        ("f32", "little")
    );
}

#[test]
fn matrix_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("protos.bin");
    let s = make_synthetic_embeddings(3, 1, 8, 1.0, 2).unwrap();
    save_matrix(&path, &s.prototypes).unwrap();
    let back = load_matrix(&path).unwrap();
    assert_eq!(bits(back.as_slice()), bits(s.prototypes.as_slice()));
}

#[test]
fn truncated_file_names_both_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.bin");
    save_features(&path, &noisy_dataset()).unwrap();
    let bytes = fs::read(&path).unwrap();
    let full = bytes.len() as u64;
    fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
    match load_features(&path) {
        Err(e @ HarnessError::Truncated { expected, actual }) => {
            assert_eq!((expected, actual), (full, full - 7));
            let msg = e.to_string();
            assert!(
                msg.contains(&full.to_string()) && msg.contains(&(full - 7).to_string()),
                "{msg}"
            );
        }
        other => panic!("expected truncation, got {other:?}"),
    }
    fs::write(&path, &bytes[..10]).unwrap();
    assert!(matches!(
        load_features(&path),
        Err(HarnessError::Truncated { .. })
    ));
}

#[test]
fn malformed_headers_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.bin");
    save_features(&path, &noisy_dataset()).unwrap();
    let good = fs::read(&path).unwrap();
    let mut zero_dim = good.clone();
    zero_dim[20..28].copy_from_slice(&0u64.to_le_bytes());
    assert!(matches!(
        parse_header(&zero_dim),
        Err(HarnessError::MalformedHeader(_))
    ));
    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(
        parse_header(&magic),
        Err(HarnessError::MalformedHeader(_))
    ));
    let mut dtype = good.clone();
    dtype[6] = 9;
    assert!(matches!(
        parse_header(&dtype),
        Err(HarnessError::MalformedHeader(_))
    ));
}

#[test]
fn corrupted_payload_fails_the_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    save_features(&path, &noisy_dataset()).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    bytes[HEADER_LEN + 5] ^= 0x40;
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        load_features(&path),
        Err(HarnessError::Checksum { .. })
    ));
}

#[test]
fn sidecar_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("side.json");
    let ds = noisy_dataset();
    save_sidecar(&path, &ds).unwrap();
    let payload = dir.path().join("side.bin");
    assert_eq!(fs::metadata(&payload).unwrap().len(), 20 * 12 * 4);
    let back = load_features(&path).unwrap();
    assert_eq!(bits(back.features.as_slice()), bits(ds.features.as_slice()));
    assert_eq!(back.observed_labels, ds.observed_labels);
    assert_eq!(back.true_labels, ds.true_labels);
    let mut raw = fs::read(&payload).unwrap();
    raw[0] ^= 1;
    fs::write(&payload, &raw).unwrap();
    assert!(matches!(
        load_features(&path),
        Err(HarnessError::Checksum { .. })
    ));
}
