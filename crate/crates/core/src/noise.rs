//! Label-noise injection and few-shot subsampling.
//!
//! Every function is a pure function of its inputs and seed. Noise is applied
//! independently per item over the whole set.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::rng;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
    Rademacher,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::Asymmetric => "asymmetric",
            NoiseKind::Rademacher => "rademacher",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" | "sym" => Ok(NoiseKind::Symmetric),
            "asymmetric" | "asym" => Ok(NoiseKind::Asymmetric),
            "rademacher" => Ok(NoiseKind::Rademacher),
            other => Err(Error::invalid("noise kind", other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, rate: f64, seed: u64) -> Self {
        Self { kind, rate, seed }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        check_rate(self.rate)?;
        if self.kind == NoiseKind::Rademacher {
            if self.rate > 0.5 {
                return Err(Error::invalid("rate", "rademacher noise requires p <= 1/2"));
            }
            if classes != 2 {
                return Err(Error::invalid("classes", "rademacher noise is binary"));
            }
        }
        Ok(())
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid("rate", format!("{rate} not in [0, 1]")));
    }
    Ok(())
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if classes < 2 {
        return Err(Error::invalid(
            "classes",
            "label noise needs at least two classes",
        ));
    }
    match labels.iter().find(|&&y| y >= classes) {
        Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

/// Flips each label with probability `rate` to a class drawn uniformly from the
/// other `classes − 1`.
pub fn inject_symmetric(
    labels: &[usize],
    classes: usize,
    rate: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    check_rate(rate)?;
    check_labels(labels, classes)?;
    let mut rng = rng::seeded(seed);
    Ok(labels
        .iter()
        .map(|&y| {
            let flip = rng.random::<f64>() < rate;
            if flip {
                let k = rng.random_range(0..classes - 1);
                if k >= y {
                    k + 1
                } else {
                    k
                }
            } else {
                y
            }
        })
        .collect())
}

/// Flips each label with probability `rate` to its successor `(y + 1) mod classes`.
pub fn inject_asymmetric(
    labels: &[usize],
    classes: usize,
    rate: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    check_rate(rate)?;
    check_labels(labels, classes)?;
    let mut rng = rng::seeded(seed);
    Ok(labels
        .iter()
        .map(|&y| {
            if rng.random::<f64>() < rate {
                (y + 1) % classes
            } else {
                y
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RademacherDraw {
    pub labels: Vec<i8>,
    /// Number of flip events drawn.
    pub flips: usize,
}

/// Flips each ±1 label independently with probability `p ≤ 1/2`.
pub fn rademacher_flip(labels: &[i8], p: f64, seed: u64) -> Result<RademacherDraw> {
    check_rate(p)?;
    if p > 0.5 {
        return Err(Error::invalid(
            "p",
            "rademacher flip probability must be <= 1/2",
        ));
    }
    if labels.iter().any(|&y| y != 1 && y != -1) {
        return Err(Error::invalid(
            "labels",
            "rademacher labels must be +1 or -1",
        ));
    }
    let mut rng = rng::seeded(seed);
    let mut flips = 0;
    let labels = labels
        .iter()
        .map(|&y| {
            if rng.random::<f64>() < p {
                flips += 1;
                -y
            } else {
                y
            }
        })
        .collect();
    Ok(RademacherDraw { labels, flips })
}

/// Features with observed (possibly noisy) labels and, when known, the true labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset<T> {
    pub features: FeatureMatrix<T>,
    pub observed_labels: Vec<usize>,
    pub true_labels: Option<Vec<usize>>,
    pub class_count: usize,
    pub rng_seed: u64,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(
        features: FeatureMatrix<T>,
        observed_labels: Vec<usize>,
        true_labels: Option<Vec<usize>>,
        class_count: usize,
        rng_seed: u64,
    ) -> Result<Self> {
        let n = features.rows();
        for (what, len) in [
            ("observed labels", Some(observed_labels.len())),
            ("true labels", true_labels.as_ref().map(Vec::len)),
        ] {
            if let Some(len) = len {
                if len != n {
                    return Err(Error::DimensionMismatch {
                        what,
                        expected: n,
                        actual: len,
                    });
                }
            }
        }
        let all = observed_labels.iter().chain(true_labels.iter().flatten());
        for &label in all {
            if label >= class_count {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: class_count,
                });
            }
        }
        Ok(Self {
            features,
            observed_labels,
            true_labels,
            class_count,
            rng_seed,
        })
    }

    pub fn len(&self) -> usize {
        self.observed_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed_labels.is_empty()
    }

    /// Ground truth if recorded, otherwise the observed labels.
    pub fn reference_labels(&self) -> &[usize] {
        self.true_labels.as_deref().unwrap_or(&self.observed_labels)
    }

    /// Replaces the observed labels with noisy ones. Features are untouched; if
    /// no ground truth was recorded the current labels become the ground truth.
    pub fn with_noise(mut self, spec: &NoiseSpec) -> Result<Self> {
        spec.validate(self.class_count)?;
        let noisy = match spec.kind {
            NoiseKind::Symmetric => inject_symmetric(
                &self.observed_labels,
                self.class_count,
                spec.rate,
                spec.seed,
            )?,
            NoiseKind::Asymmetric => inject_asymmetric(
                &self.observed_labels,
                self.class_count,
                spec.rate,
                spec.seed,
            )?,
            NoiseKind::Rademacher => {
                let signs: Vec<i8> = self
                    .observed_labels
                    .iter()
                    .map(|&y| if y == 0 { 1 } else { -1 })
                    .collect();
                rademacher_flip(&signs, spec.rate, spec.seed)?
                    .labels
                    .into_iter()
                    .map(|s| if s == 1 { 0 } else { 1 })
                    .collect()
            }
        };
        if self.true_labels.is_none() {
            self.true_labels = Some(std::mem::take(&mut self.observed_labels));
        }
        self.observed_labels = noisy;
        Ok(self)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            observed_labels: indices.iter().map(|&i| self.observed_labels[i]).collect(),
            true_labels: self
                .true_labels
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i]).collect()),
            class_count: self.class_count,
            rng_seed: self.rng_seed,
        }
    }

    /// Sample count per observed class.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &y in &self.observed_labels {
            h[y] += 1;
        }
        h
    }
}

/// Draws `min(shots, class size)` items per observed class without replacement.
/// The result is ordered by class, then by original index.
pub fn few_shot_sample<T: Scalar>(
    dataset: &LabeledDataset<T>,
    shots: usize,
    seed: u64,
) -> Result<LabeledDataset<T>> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut rng = rng::seeded(seed);
    let mut by_class = vec![Vec::new(); dataset.class_count];
    for (i, &y) in dataset.observed_labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut picked = Vec::new();
    for members in &by_class {
        let take = shots.min(members.len());
        let mut chosen: Vec<usize> = index::sample(&mut rng, members.len(), take)
            .into_iter()
            .map(|j| members[j])
            .collect();
        chosen.sort_unstable();
        picked.extend(chosen);
    }
    let mut out = dataset.subset(&picked);
    out.rng_seed = seed;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize, classes: usize) -> Vec<usize> {
        (0..n).map(|i| i % classes).collect()
    }

    #[test]
    fn zero_rate_is_identity() {
        let y = labels(100, 4);
        assert_eq!(inject_symmetric(&y, 4, 0.0, 1).unwrap(), y);
        assert_eq!(inject_asymmetric(&y, 4, 0.0, 1).unwrap(), y);
        let s: Vec<i8> = (0..50).map(|i| if i % 3 == 0 { 1 } else { -1 }).collect();
        let d = rademacher_flip(&s, 0.0, 1).unwrap();
        assert_eq!((d.labels, d.flips), (s, 0));
    }

    #[test]
    fn full_symmetric_rate_always_moves() {
        let y = labels(1000, 3);
        let noisy = inject_symmetric(&y, 3, 1.0, 9).unwrap();
        assert!(y.iter().zip(&noisy).all(|(a, b)| a != b));
    }

    #[test]
    fn asymmetric_successor_wraps() {
        assert_eq!(inject_asymmetric(&[3], 4, 1.0, 0).unwrap(), vec![0]);
    }

    #[test]
    fn symmetric_flip_fraction() {
        let y = labels(10_000, 10);
        let noisy = inject_symmetric(&y, 10, 0.5, 2024).unwrap();
        let frac = y.iter().zip(&noisy).filter(|(a, b)| a != b).count() as f64 / 1e4;
        assert!((0.48..=0.52).contains(&frac), "{frac}");
    }

    #[test]
    fn asymmetric_flip_fraction_and_structure() {
        let y = labels(10_000, 5);
        let noisy = inject_asymmetric(&y, 5, 0.25, 77).unwrap();
        let flipped: Vec<_> = y.iter().zip(&noisy).filter(|(a, b)| a != b).collect();
        let frac = flipped.len() as f64 / 1e4;
        assert!((0.23..=0.27).contains(&frac), "{frac}");
        assert!(flipped.iter().all(|(&a, &b)| b == (a + 1) % 5));
    }

    #[test]
    fn rademacher_fraction_and_bookkeeping() {
        let s = vec![1i8; 20_000];
        let d = rademacher_flip(&s, 0.5, 5).unwrap();
        let disagree = s.iter().zip(&d.labels).filter(|(a, b)| a != b).count();
        assert_eq!(disagree, d.flips);
        let frac = disagree as f64 / 20_000.0;
        assert!((0.48..=0.52).contains(&frac), "{frac}");
        assert!(rademacher_flip(&s, 0.6, 5).is_err());
        assert!(rademacher_flip(&[0], 0.1, 5).is_err());
    }

    #[test]
    fn invalid_inputs() {
        assert!(inject_symmetric(&[0, 0], 1, 0.1, 0).is_err());
        assert!(inject_asymmetric(&[0, 0], 1, 0.1, 0).is_err());
        assert!(inject_symmetric(&[0, 5], 3, 0.1, 0).is_err());
        assert!(inject_symmetric(&[0], 3, 1.5, 0).is_err());
        assert!(NoiseSpec::new(NoiseKind::Rademacher, 0.3, 0)
            .validate(3)
            .is_err());
    }

    fn dataset(per_class: &[usize]) -> LabeledDataset<f64> {
        let y: Vec<usize> = per_class
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        let n = y.len();
        let feats = FeatureMatrix::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        LabeledDataset::new(feats, y, None, per_class.len(), 0).unwrap()
    }

    #[test]
    fn few_shot_counts() {
        let ds = dataset(&[100; 10]);
        let fs = few_shot_sample(&ds, 16, 3).unwrap();
        assert_eq!(fs.len(), 160);
        assert_eq!(fs.histogram(), vec![16; 10]);
        // ordered by class then original index
        let idx: Vec<f64> = (0..fs.len()).map(|i| fs.features.row(i)[0]).collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));

        let small = dataset(&[3, 0, 5]);
        let one = few_shot_sample(&small, 1, 1).unwrap();
        assert_eq!(one.histogram(), vec![1, 0, 1]);
        let all = few_shot_sample(&small, 10, 1).unwrap();
        assert_eq!(all.len(), 8);

        let empty = LabeledDataset::new(
            FeatureMatrix::<f64>::new(0, 1, vec![]).unwrap(),
            vec![],
            None,
            2,
            0,
        )
        .unwrap();
        assert!(few_shot_sample(&empty, 1, 0).is_err());
    }

    #[test]
    fn with_noise_keeps_features_and_truth() {
        let ds = dataset(&[50, 50, 50]);
        let noisy = ds
            .clone()
            .with_noise(&NoiseSpec::new(NoiseKind::Symmetric, 0.4, 11))
            .unwrap();
        assert_eq!(noisy.features, ds.features);
        assert_eq!(noisy.true_labels.as_deref(), Some(&ds.observed_labels[..]));
        assert_ne!(noisy.observed_labels, ds.observed_labels);
        let again = noisy
            .clone()
            .with_noise(&NoiseSpec::new(NoiseKind::Asymmetric, 0.2, 3))
            .unwrap();
        assert_eq!(again.true_labels, noisy.true_labels);
    }
}
