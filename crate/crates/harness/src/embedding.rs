//! Precomputed embedding files.
//!
//! Binary layout, all integers little-endian:
//!
//! | offset | size | field                                              |
//! |--------|------|----------------------------------------------------|
//! | 0      | 4    | magic `NLPE`                                       |
//! | 4      | 2    | format version (1)                                 |
//! | 6      | 1    | dtype tag (1 = f32)                                |
//! | 7      | 1    | endianness tag (0 = little)                        |
//! | 8      | 1    | flags: bit 0 normalized, bit 1 labels, bit 2 truth |
//! | 9      | 3    | reserved, zero                                     |
//! | 12     | 8    | count                                              |
//! | 20     | 8    | dim                                                |
//! | 28     | 8    | class count                                        |
//! | 36     | 8    | digest: first 8 bytes of SHA-256 over the body     |
//! | 44     | …    | body: `count·dim` f32, then optional u32 label arrays |
//!
//! The JSON sidecar alternative stores the same header fields (digest as hex)
//! plus labels in `<name>.json` and the raw f32 payload in `<name>.bin`.

use std::fs;
use std::path::{Path, PathBuf};

use nlprompt_core::{FeatureMatrix, LabeledDataset};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 4] = b"NLPE";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 44;
const DTYPE_F32: u8 = 1;
const LITTLE_ENDIAN: u8 = 0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub count: u64,
    pub dim: u64,
    pub class_count: u64,
    pub dtype: String,
    pub endianness: String,
    pub normalized: bool,
    pub has_labels: bool,
    pub has_true_labels: bool,
    pub digest: u64,
}

impl EmbeddingHeader {
    fn body_len(&self) -> u64 {
        let labels = u64::from(self.has_labels) + u64::from(self.has_true_labels);
        self.count * self.dim * 4 + labels * self.count * 4
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(HarnessError::MalformedHeader("dim must be positive".into()));
        }
        if self.dtype != "f32" {
            return Err(HarnessError::MalformedHeader(format!(
                "unsupported dtype {}",
                self.dtype
            )));
        }
        if self.endianness != "little" {
            return Err(HarnessError::MalformedHeader(format!(
                "unsupported endianness {}",
                self.endianness
            )));
        }
        if (self.has_labels || self.has_true_labels) && self.class_count == 0 {
            return Err(HarnessError::MalformedHeader(
                "labels present but class count is 0".into(),
            ));
        }
        Ok(())
    }
}

pub fn digest(body: &[u8]) -> u64 {
    let hash = Sha256::digest(body);
    u64::from_le_bytes(hash[..8].try_into().expect("8 bytes"))
}

fn encode_body(dataset: &LabeledDataset<f64>, with_labels: bool) -> Vec<u8> {
    let feats = dataset.features.as_slice();
    let mut body = Vec::with_capacity(feats.len() * 4 + dataset.len() * 8);
    for &x in feats {
        body.extend_from_slice(&(x as f32).to_le_bytes());
    }
    if with_labels {
        for &y in &dataset.observed_labels {
            body.extend_from_slice(&(y as u32).to_le_bytes());
        }
    }
    if let Some(truth) = &dataset.true_labels {
        for &y in truth {
            body.extend_from_slice(&(y as u32).to_le_bytes());
        }
    }
    body
}

fn header_for(dataset: &LabeledDataset<f64>, with_labels: bool, body: &[u8]) -> EmbeddingHeader {
    EmbeddingHeader {
        count: dataset.features.rows() as u64,
        dim: dataset.features.dim() as u64,
        class_count: dataset.class_count as u64,
        dtype: "f32".into(),
        endianness: "little".into(),
        normalized: dataset.features.is_normalized(),
        has_labels: with_labels,
        has_true_labels: dataset.true_labels.is_some(),
        digest: digest(body),
    }
}

/// Writes the dataset in the binary format. Features are stored as f32.
pub fn save_features(path: &Path, dataset: &LabeledDataset<f64>) -> Result<()> {
    let body = encode_body(dataset, true);
    let header = header_for(dataset, true, &body);
    write_binary(path, &header, &body)
}

/// Feature matrix without labels, e.g. class prototypes.
pub fn save_matrix(path: &Path, matrix: &FeatureMatrix<f64>) -> Result<()> {
    let ds = LabeledDataset::new(matrix.clone(), vec![0; matrix.rows()], None, 1, 0)?;
    let body = encode_body(&ds, false);
    let mut header = header_for(&ds, false, &body);
    header.class_count = 0;
    write_binary(path, &header, &body)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn write_binary(path: &Path, header: &EmbeddingHeader, body: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + body.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.push(DTYPE_F32);
    bytes.push(LITTLE_ENDIAN);
    let flags = u8::from(header.normalized)
        | (u8::from(header.has_labels) << 1)
        | (u8::from(header.has_true_labels) << 2);
    bytes.push(flags);
    bytes.extend_from_slice(&[0, 0, 0]);
    for v in [header.count, header.dim, header.class_count, header.digest] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend_from_slice(body);
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

/// Reads a label-free matrix written by [`save_matrix`] (or any embedding file).
pub fn load_matrix(path: &Path) -> Result<FeatureMatrix<f64>> {
    Ok(load_features(path)?.features)
}

pub fn parse_header(bytes: &[u8]) -> Result<EmbeddingHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(HarnessError::Truncated {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(HarnessError::MalformedHeader("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(HarnessError::MalformedHeader(format!(
            "unsupported version {version}"
        )));
    }
    let dtype = match bytes[6] {
        DTYPE_F32 => "f32".to_string(),
        other => format!("tag{other}"),
    };
    let endianness = match bytes[7] {
        LITTLE_ENDIAN => "little".to_string(),
        other => format!("tag{other}"),
    };
    let flags = bytes[8];
    if flags & !0b111 != 0 || bytes[9..12] != [0, 0, 0] {
        return Err(HarnessError::MalformedHeader("reserved bits set".into()));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let header = EmbeddingHeader {
        count: word(12),
        dim: word(20),
        class_count: word(28),
        dtype,
        endianness,
        normalized: flags & 1 != 0,
        has_labels: flags & 2 != 0,
        has_true_labels: flags & 4 != 0,
        digest: word(36),
    };
    header.validate()?;
    Ok(header)
}

fn decode(header: &EmbeddingHeader, body: &[u8]) -> Result<LabeledDataset<f64>> {
    let expected = header.body_len();
    if body.len() as u64 != expected {
        let (e, a) = (expected, body.len() as u64);
        return Err(if a < e {
            HarnessError::Truncated {
                expected: e + HEADER_LEN as u64,
                actual: a + HEADER_LEN as u64,
            }
        } else {
            HarnessError::MalformedHeader(format!("{} trailing bytes", a - e))
        });
    }
    let actual = digest(body);
    if actual != header.digest {
        return Err(HarnessError::Checksum {
            expected: header.digest,
            actual,
        });
    }
    let (count, dim) = (header.count as usize, header.dim as usize);
    let n_feat = count * dim;
    let feats: Vec<f32> = body[..n_feat * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let mut offset = n_feat * 4;
    let mut read_labels = |present: bool| -> Option<Vec<usize>> {
        present.then(|| {
            let out = body[offset..offset + count * 4]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
                .collect();
            offset += count * 4;
            out
        })
    };
    let labels = read_labels(header.has_labels);
    let truth = read_labels(header.has_true_labels);
    let mut features = FeatureMatrix::new(count, dim, feats)?;
    if header.normalized {
        features = features.assume_normalized()?;
    }
    let features = features.cast::<f64>();
    let classes = header.class_count.max(1) as usize;
    Ok(LabeledDataset::new(
        features,
        labels.unwrap_or_else(|| vec![0; count]),
        truth,
        classes,
        0,
    )?)
}

/// Reads a binary embedding file, or a JSON sidecar when the path ends in `.json`.
pub fn load_features(path: &Path) -> Result<LabeledDataset<f64>> {
    if path.extension().is_some_and(|e| e == "json") {
        return load_sidecar(path);
    }
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let header = parse_header(&bytes)?;
    decode(&header, &bytes[HEADER_LEN..])
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    header: SidecarHeader,
    payload: String,
    labels: Option<Vec<usize>>,
    true_labels: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct SidecarHeader {
    count: u64,
    dim: u64,
    class_count: u64,
    dtype: String,
    endianness: String,
    normalized: bool,
    /// Hex digest of the raw payload file.
    digest: String,
}

fn sidecar_paths(json: &Path) -> (PathBuf, PathBuf) {
    (json.to_path_buf(), json.with_extension("bin"))
}

/// Writes `<stem>.json` + `<stem>.bin`; `path` is the `.json` file.
pub fn save_sidecar(path: &Path, dataset: &LabeledDataset<f64>) -> Result<()> {
    let (json_path, bin_path) = sidecar_paths(path);
    let payload: Vec<u8> = dataset
        .features
        .as_slice()
        .iter()
        .flat_map(|&x| (x as f32).to_le_bytes())
        .collect();
    let sidecar = Sidecar {
        header: SidecarHeader {
            count: dataset.features.rows() as u64,
            dim: dataset.features.dim() as u64,
            class_count: dataset.class_count as u64,
            dtype: "f32".into(),
            endianness: "little".into(),
            normalized: dataset.features.is_normalized(),
            digest: format!("{:016x}", digest(&payload)),
        },
        payload: bin_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        labels: Some(dataset.observed_labels.clone()),
        true_labels: dataset.true_labels.clone(),
    };
    ensure_parent(&bin_path)?;
    fs::write(&bin_path, &payload).map_err(|e| HarnessError::io(&bin_path, e))?;
    let text = serde_json::to_string_pretty(&sidecar)?;
    fs::write(&json_path, text).map_err(|e| HarnessError::io(&json_path, e))
}

fn load_sidecar(path: &Path) -> Result<LabeledDataset<f64>> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    let digest = u64::from_str_radix(&sidecar.header.digest, 16)
        .map_err(|e| HarnessError::MalformedHeader(format!("digest: {e}")))?;
    let bin_path = path.with_file_name(&sidecar.payload);
    let mut body = fs::read(&bin_path).map_err(|e| HarnessError::io(&bin_path, e))?;
    let header = EmbeddingHeader {
        count: sidecar.header.count,
        dim: sidecar.header.dim,
        class_count: sidecar.header.class_count,
        dtype: sidecar.header.dtype,
        endianness: sidecar.header.endianness,
        normalized: sidecar.header.normalized,
        has_labels: false,
        has_true_labels: false,
        digest,
    };
    header.validate()?;
    let expected = header.body_len();
    if (body.len() as u64) < expected {
        return Err(HarnessError::Truncated {
            expected,
            actual: body.len() as u64,
        });
    }
    let actual = self::digest(&body);
    if actual != digest {
        return Err(HarnessError::Checksum {
            expected: digest,
            actual,
        });
    }
    // append labels so the shared decoder handles them
    let mut header = header;
    for (present, labels) in [
        (&mut header.has_labels, &sidecar.labels),
        (&mut header.has_true_labels, &sidecar.true_labels),
    ] {
        if let Some(l) = labels {
            *present = true;
            body.extend(l.iter().flat_map(|&y| (y as u32).to_le_bytes()));
        }
    }
    header.digest = self::digest(&body);
    decode(&header, &body)
}
