use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::scalar::Scalar;

/// `C × N` transport cost, row-major, all entries finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix<T> {
    classes: usize,
    samples: usize,
    data: Vec<T>,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn new(classes: usize, samples: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != classes * samples {
            return Err(Error::DimensionMismatch {
                what: "cost entries",
                expected: classes * samples,
                actual: data.len(),
            });
        }
        if classes == 0 || samples == 0 {
            return Err(Error::Empty("cost matrix"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("cost matrix"));
        }
        Ok(Self {
            classes,
            samples,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let samples = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != samples) {
            return Err(Error::invalid("cost", "ragged rows"));
        }
        Self::new(rows.len(), samples, rows.concat())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn get(&self, class: usize, sample: usize) -> T {
        self.data[class * self.samples + sample]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

/// Cost `−log p` where `p[·, i]` is the softmax over classes of
/// `⟨prototype_c, sample_i⟩ / temperature`.
///
/// Raw cosine similarities can be nonpositive, so the logarithm is taken of the
/// column-wise softmax instead. Each column of `exp(−cost)` sums to one and
/// every entry is finite and nonnegative.
pub fn build_cost_matrix<T: Scalar>(
    prototypes: &FeatureMatrix<T>,
    samples: &FeatureMatrix<T>,
    temperature: T,
) -> Result<CostMatrix<T>> {
    if !(temperature > T::zero()) || !temperature.is_finite() {
        return Err(Error::invalid("temperature", "must be positive and finite"));
    }
    require_normalized(prototypes)?;
    require_normalized(samples)?;
    let classes = prototypes.rows();
    let n = samples.rows();
    let mut cost = prototypes.gram(samples)?;
    for i in 0..n {
        let mut max = T::neg_infinity();
        for c in 0..classes {
            let z = cost[c * n + i] / temperature;
            cost[c * n + i] = z;
            max = max.max(z);
        }
        let sum: T = (0..classes).map(|c| (cost[c * n + i] - max).exp()).sum();
        let lse = max + sum.ln();
        for c in 0..classes {
            // lse ≥ max ≥ z, clamp only guards rounding.
            cost[c * n + i] = (lse - cost[c * n + i]).max(T::zero());
        }
    }
    CostMatrix::new(classes, n, cost)
}

fn require_normalized<T: Scalar>(m: &FeatureMatrix<T>) -> Result<()> {
    if m.is_normalized() {
        return Ok(());
    }
    let tol = T::unit_tolerance();
    for i in 0..m.rows() {
        let norm = m.row_norm(i);
        if (norm - T::one()).abs() > tol {
            return Err(Error::NotNormalized {
                row: i,
                norm: norm.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(())
}
