use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix of embedding vectors, one row per sample or prototype.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix<T> {
    rows: usize,
    dim: usize,
    data: Vec<T>,
    normalized: bool,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(rows: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::DimensionMismatch {
                what: "feature payload length",
                expected: rows * dim,
                actual: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
        Ok(Self {
            rows,
            dim,
            data,
            normalized: false,
        })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "row length",
                    expected: dim,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    /// Scales every row to unit L2 norm. Zero rows cannot be normalized.
    pub fn normalize(mut self) -> Result<Self> {
        for i in 0..self.rows {
            let row = &mut self.data[i * self.dim..(i + 1) * self.dim];
            let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            if norm == T::zero() {
                return Err(Error::NotNormalized { row: i, norm: 0.0 });
            }
            row.iter_mut().for_each(|x| *x = *x / norm);
        }
        self.normalized = true;
        Ok(self)
    }

    /// Marks the matrix as normalized after checking every row norm.
    pub fn assume_normalized(mut self) -> Result<Self> {
        let tol = T::unit_tolerance();
        for i in 0..self.rows {
            let norm = self.row_norm(i);
            if (norm - T::one()).abs() > tol {
                return Err(Error::NotNormalized {
                    row: i,
                    norm: norm.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Mutable access drops the normalized flag; call [`normalize`](Self::normalize) again.
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        self.normalized = false;
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_norm(&self, i: usize) -> T {
        self.row(i).iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    /// Rows selected by `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            dim: self.dim,
            data,
            normalized: self.normalized,
        }
    }

    /// Inner products `self · otherᵀ`, shape `self.rows × other.rows`, row-major.
    pub fn gram(&self, other: &Self) -> Result<Vec<T>> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                what: "feature dimension",
                expected: self.dim,
                actual: other.dim,
            });
        }
        let mut out = Vec::with_capacity(self.rows * other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.push(dot(a, other.row(j)));
            }
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMatrix<U> {
        FeatureMatrix {
            rows: self.rows,
            dim: self.dim,
            data: self
                .data
                .iter()
                .map(|x| U::from(*x).expect("finite cast"))
                .collect(),
            normalized: self.normalized,
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_sets_unit_rows() {
        let m = FeatureMatrix::from_rows(&[vec![3.0_f64, 4.0], vec![0.0, 2.0]])
            .unwrap()
            .normalize()
            .unwrap();
        assert!(m.is_normalized());
        assert_eq!(m.row(0), &[0.6, 0.8]);
        assert_eq!(m.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(FeatureMatrix::<f64>::new(2, 2, vec![0.0; 3]).is_err());
        assert!(FeatureMatrix::new(1, 1, vec![f64::NAN]).is_err());
        assert!(FeatureMatrix::new(1, 2, vec![1.0, 1.0])
            .unwrap()
            .assume_normalized()
            .is_err());
        assert!(FeatureMatrix::new(1, 2, vec![0.0, 0.0])
            .unwrap()
            .normalize()
            .is_err());
    }

    #[test]
    fn row_mut_clears_flag() {
        let mut m = FeatureMatrix::new(1, 2, vec![1.0_f32, 0.0])
            .unwrap()
            .normalize()
            .unwrap();
        m.row_mut(0)[1] = 1.0;
        assert!(!m.is_normalized());
    }
}
