//! Clean/noisy partitioning by agreement between observed labels and pseudo-labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::ot::{argmax_columns, pseudo_labels, solve_prompt_ot, SinkhornConfig, TransportPlan};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub pseudo_labels: Vec<usize>,
    pub clean_indices: Vec<usize>,
    pub noisy_indices: Vec<usize>,
}

impl PartitionResult {
    pub fn len(&self) -> usize {
        self.pseudo_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pseudo_labels.is_empty()
    }

    pub fn clean_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for &i in &self.clean_indices {
            mask[i] = true;
        }
        mask
    }

    pub fn clean_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.clean_indices.len() as f64 / self.len() as f64
    }
}

/// Sample `i` is clean iff `observed[i] == pseudo[i]`.
pub fn partition(observed: &[usize], pseudo: &[usize]) -> Result<PartitionResult> {
    if observed.len() != pseudo.len() {
        return Err(Error::DimensionMismatch {
            what: "pseudo labels",
            expected: observed.len(),
            actual: pseudo.len(),
        });
    }
    let (clean, noisy): (Vec<usize>, Vec<usize>) =
        (0..observed.len()).partition(|&i| observed[i] == pseudo[i]);
    Ok(PartitionResult {
        pseudo_labels: pseudo.to_vec(),
        clean_indices: clean,
        noisy_indices: noisy,
    })
}

/// Which side of the clean/noisy split counts as "positive" for F1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositiveClass {
    #[default]
    Clean,
    Noisy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurificationScore {
    pub accuracy: f64,
    pub f1: f64,
    /// `confusion[truth][predicted]`, index 0 = clean, 1 = noisy.
    pub confusion: [[usize; 2]; 2],
    pub positive: PositiveClass,
}

impl PurificationScore {
    fn from_confusion(confusion: [[usize; 2]; 2], positive: PositiveClass) -> Self {
        let total: usize = confusion.iter().flatten().sum();
        let correct = confusion[0][0] + confusion[1][1];
        let p = match positive {
            PositiveClass::Clean => 0,
            PositiveClass::Noisy => 1,
        };
        let q = 1 - p;
        let tp = confusion[p][p] as f64;
        let fp = confusion[q][p] as f64;
        let fneg = confusion[p][q] as f64;
        let denom = 2.0 * tp + fp + fneg;
        Self {
            accuracy: if total == 0 {
                0.0
            } else {
                correct as f64 / total as f64
            },
            f1: if denom == 0.0 { 0.0 } else { 2.0 * tp / denom },
            confusion,
            positive,
        }
    }
}

/// Scores a partition as a clean-vs-noisy classifier against ground truth.
pub fn score_purification(
    result: &PartitionResult,
    true_labels: Option<&[usize]>,
    observed: &[usize],
    positive: PositiveClass,
) -> Result<PurificationScore> {
    let truth = true_labels.ok_or(Error::MissingTrueLabels)?;
    for (what, len) in [
        ("true labels", truth.len()),
        ("observed labels", observed.len()),
    ] {
        if len != result.len() {
            return Err(Error::DimensionMismatch {
                what,
                expected: result.len(),
                actual: len,
            });
        }
    }
    let predicted = result.clean_mask();
    let mut confusion = [[0usize; 2]; 2];
    for i in 0..result.len() {
        let actual = usize::from(observed[i] != truth[i]);
        let guess = usize::from(!predicted[i]);
        confusion[actual][guess] += 1;
    }
    Ok(PurificationScore::from_confusion(confusion, positive))
}

/// Pseudo-label = most similar prototype, with no marginal constraint.
pub fn zero_shot_labels<T: Scalar>(
    prototypes: &FeatureMatrix<T>,
    samples: &FeatureMatrix<T>,
) -> Result<Vec<usize>> {
    let sim = prototypes.gram(samples)?;
    Ok(argmax_columns(&sim, prototypes.rows(), samples.rows()))
}

pub fn zero_shot_partition<T: Scalar>(
    prototypes: &FeatureMatrix<T>,
    samples: &FeatureMatrix<T>,
    observed: &[usize],
) -> Result<PartitionResult> {
    partition(observed, &zero_shot_labels(prototypes, samples)?)
}

/// Scope of each OT solve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "size")]
pub enum Granularity {
    /// One plan over the whole dataset.
    #[default]
    Dataset,
    /// Independent plans over consecutive batches of this size.
    Batch(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OtPartition<T> {
    pub partition: PartitionResult,
    /// One plan per solve (a single plan at dataset granularity).
    pub plans: Vec<TransportPlan<T>>,
}

impl<T: Scalar> OtPartition<T> {
    /// Largest residual over all solves.
    pub fn residual(&self) -> T {
        self.plans
            .iter()
            .map(|p| p.residual())
            .fold(T::zero(), T::max)
    }

    pub fn converged(&self) -> bool {
        self.plans.iter().all(|p| p.converged())
    }
}

/// OT pseudo-labels against prototypes, then the agreement split.
pub fn ot_partition<T: Scalar>(
    prototypes: &FeatureMatrix<T>,
    samples: &FeatureMatrix<T>,
    observed: &[usize],
    config: &SinkhornConfig<T>,
    temperature: T,
    granularity: Granularity,
) -> Result<OtPartition<T>> {
    let n = samples.rows();
    if observed.len() != n {
        return Err(Error::DimensionMismatch {
            what: "observed labels",
            expected: n,
            actual: observed.len(),
        });
    }
    let batch = match granularity {
        Granularity::Dataset => n.max(1),
        Granularity::Batch(0) => return Err(Error::invalid("batch size", "must be positive")),
        Granularity::Batch(b) => b,
    };
    let mut pseudo = Vec::with_capacity(n);
    let mut plans = Vec::new();
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(batch) {
        let part = if chunk.len() == n {
            samples.clone()
        } else {
            samples.select_rows(chunk)
        };
        let plan = solve_prompt_ot(prototypes, &part, config, temperature)?;
        pseudo.extend(pseudo_labels(&plan));
        plans.push(plan);
    }
    Ok(OtPartition {
        partition: partition(observed, &pseudo)?,
        plans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_cases() {
        let all = partition(&[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!(all.clean_indices, vec![0, 1, 2]);
        assert!(all.noisy_indices.is_empty());
        let none = partition(&[0, 1], &[1, 0]).unwrap();
        assert_eq!(none.noisy_indices, vec![0, 1]);
        let mixed = partition(&[0, 1, 2], &[0, 2, 2]).unwrap();
        assert_eq!(mixed.clean_indices, vec![0, 2]);
        assert_eq!(mixed.noisy_indices, vec![1]);
        assert!(partition(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn partition_is_idempotent() {
        let r = partition(&[0, 1, 2, 1], &[0, 2, 2, 1]).unwrap();
        let observed = [0, 1, 2, 1];
        let again = partition(&observed, &r.pseudo_labels).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn score_cases() {
        let truth = [0, 1, 2, 3, 4];
        let observed = [0, 1, 0, 3, 0];
        // perfect: clean exactly where observed == truth
        let perfect = partition(&observed, &truth).unwrap();
        let s =
            score_purification(&perfect, Some(&truth), &observed, PositiveClass::Clean).unwrap();
        assert_eq!((s.accuracy, s.f1), (1.0, 1.0));
        // inverted
        let inverted = PartitionResult {
            pseudo_labels: vec![9; 5],
            clean_indices: perfect.noisy_indices.clone(),
            noisy_indices: perfect.clean_indices.clone(),
        };
        let s =
            score_purification(&inverted, Some(&truth), &observed, PositiveClass::Clean).unwrap();
        assert_eq!(s.accuracy, 0.0);
        assert!(score_purification(&perfect, None, &observed, PositiveClass::Clean).is_err());
    }

    #[test]
    fn all_clean_classifier_f1() {
        // 6 of 10 truly clean
        let truth: Vec<usize> = vec![0; 10];
        let observed: Vec<usize> = (0..10).map(|i| usize::from(i >= 6)).collect();
        let all_clean = partition(&observed, &observed).unwrap();
        let s =
            score_purification(&all_clean, Some(&truth), &observed, PositiveClass::Clean).unwrap();
        assert!((s.accuracy - 0.6).abs() < 1e-12);
        assert!((s.f1 - 0.75).abs() < 1e-12);
        assert_eq!(s.confusion, [[6, 0], [4, 0]]);
        let flipped =
            score_purification(&all_clean, Some(&truth), &observed, PositiveClass::Noisy).unwrap();
        assert_eq!(flipped.f1, 0.0);
    }

    #[test]
    fn zero_shot_cases() {
        let protos = FeatureMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])
            .unwrap()
            .normalize()
            .unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let samples = FeatureMatrix::from_rows(&[vec![0.0, 1.0], vec![h, h]])
            .unwrap()
            .normalize()
            .unwrap();
        let r = zero_shot_partition(&protos, &samples, &[1, 1]).unwrap();
        assert_eq!(r.pseudo_labels, vec![1, 0]);
        assert_eq!(r.clean_indices, vec![0]);
    }
}
