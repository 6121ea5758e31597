//! Synthetic class-clustered embeddings standing in for encoder outputs.

use nlprompt_core::{rng, Error, FeatureMatrix, LabeledDataset};
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;

/// Dataset, the class prototypes it was drawn around, and any warnings.
#[derive(Clone, Debug)]
pub struct SyntheticEmbeddings {
    pub dataset: LabeledDataset<f64>,
    pub prototypes: FeatureMatrix<f64>,
    pub warnings: Vec<String>,
}

fn gaussian(rng: &mut rng::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn f32_exact(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| f64::from(x as f32)).collect()
}

/// Unit rows, renormalized and rounded through f32 so files round-trip exactly.
fn unit_rows(rows: usize, dim: usize, data: Vec<f64>) -> Result<FeatureMatrix<f64>> {
    let m = FeatureMatrix::new(rows, dim, data)?.normalize()?;
    let rounded = FeatureMatrix::new(rows, dim, f32_exact(m.into_vec()))?;
    Ok(rounded.cast::<f32>().assume_normalized()?.cast())
}

/// `classes` random unit prototypes. When `dim >= classes` they are exactly
/// orthogonal (Gram-Schmidt on Gaussian draws).
pub fn random_prototypes(
    classes: usize,
    dim: usize,
    seed: u64,
) -> Result<(FeatureMatrix<f64>, Vec<String>)> {
    let mut rng = rng::stream(seed, 0);
    let mut warnings = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(classes);
    let orthogonal = dim >= classes;
    if !orthogonal {
        warnings.push(format!(
            "dim {dim} < classes {classes}: prototypes cannot be orthogonal"
        ));
    }
    while rows.len() < classes {
        let mut v = gaussian(&mut rng, dim);
        if orthogonal {
            for r in &rows {
                let proj: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= proj * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        rows.push(v.into_iter().map(|x| x / norm).collect());
    }
    let flat = rows.concat();
    Ok((unit_rows(classes, dim, flat)?, warnings))
}

/// `per_class` samples around each prototype: `normalize(p + z / tightness)`
/// with `z ~ N(0, I/dim)`, so `‖z‖ ≈ 1`. Infinite tightness gives the prototypes.
pub fn sample_clusters(
    prototypes: &FeatureMatrix<f64>,
    per_class: usize,
    tightness: f64,
    seed: u64,
) -> Result<LabeledDataset<f64>> {
    if per_class == 0 {
        return Err(Error::invalid("per_class", "must be positive").into());
    }
    if !(tightness > 0.0) {
        return Err(Error::invalid("tightness", "must be positive").into());
    }
    let (classes, dim) = (prototypes.rows(), prototypes.dim());
    let mut rng = rng::stream(seed, 1);
    let scale = 1.0 / (tightness * (dim as f64).sqrt());
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        for _ in 0..per_class {
            let z = gaussian(&mut rng, dim);
            data.extend(prototypes.row(c).iter().zip(&z).map(|(p, z)| p + z * scale));
            labels.push(c);
        }
    }
    let features = unit_rows(classes * per_class, dim, data)?;
    Ok(LabeledDataset::new(
        features,
        labels.clone(),
        Some(labels),
        classes,
        seed,
    )?)
}

pub fn make_synthetic_embeddings(
    classes: usize,
    per_class: usize,
    dim: usize,
    tightness: f64,
    seed: u64,
) -> Result<SyntheticEmbeddings> {
    if classes == 0 || dim == 0 {
        return Err(Error::invalid("classes/dim", "must be positive").into());
    }
    let (prototypes, warnings) = random_prototypes(classes, dim, seed)?;
    let dataset = sample_clusters(&prototypes, per_class, tightness, seed)?;
    Ok(SyntheticEmbeddings {
        dataset,
        prototypes,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nlprompt_core::purify::zero_shot_labels;

    fn zero_shot_accuracy(s: &SyntheticEmbeddings) -> f64 {
        let pred = zero_shot_labels(&s.prototypes, &s.dataset.features).unwrap();
        let truth = s.dataset.reference_labels();
        pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
    }

    #[test]
    fn infinite_tightness_reproduces_prototypes() {
        let s = make_synthetic_embeddings(4, 3, 8, f64::INFINITY, 5).unwrap();
        for (i, &y) in s.dataset.observed_labels.iter().enumerate() {
            assert_eq!(s.dataset.features.row(i), s.prototypes.row(y));
        }
        assert_eq!(zero_shot_accuracy(&s), 1.0);
    }

    #[test]
    fn histogram_is_exact() {
        let s = make_synthetic_embeddings(5, 7, 16, 2.0, 1).unwrap();
        assert_eq!(s.dataset.histogram(), vec![7; 5]);
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn two_orthogonal_classes_moderate_noise() {
        let s = make_synthetic_embeddings(2, 200, 2, 1.0, 3).unwrap();
        let p = &s.prototypes;
        assert!((p.row(0)[0] * p.row(1)[0] + p.row(0)[1] * p.row(1)[1]).abs() < 1e-6);
        let acc = zero_shot_accuracy(&s);
        assert!(acc > 0.5 && acc < 1.0, "{acc}");
    }

    #[test]
    fn low_dim_warns() {
        let s = make_synthetic_embeddings(5, 2, 3, 4.0, 0).unwrap();
        assert_eq!(s.warnings.len(), 1);
        assert_eq!(s.prototypes.rows(), 5);
    }
}
