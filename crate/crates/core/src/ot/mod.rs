//! Entropic optimal transport between class prototypes and samples.
//!
//! Plans are `C × N` (classes by samples), stored row-major.

mod cost;
mod decode;
mod oracle;
mod sinkhorn;

pub use cost::{build_cost_matrix, CostMatrix};
pub use decode::{argmax_columns, pseudo_labels};
pub use oracle::{lp_oracle, OracleSolution, ORACLE_LIMIT};
pub use sinkhorn::{sinkhorn, solve_prompt_ot, uniform_marginal, SinkhornConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Nonnegative coupling between classes (rows) and samples (columns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan<T> {
    classes: usize,
    samples: usize,
    data: Vec<T>,
    row_marginal: Vec<T>,
    col_marginal: Vec<T>,
    residual: T,
    iterations: usize,
    converged: bool,
}

impl<T: Scalar> TransportPlan<T> {
    /// Wraps an explicit matrix. The marginals are taken to be its own row and
    /// column sums, so the residual is zero.
    pub fn from_matrix(classes: usize, samples: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != classes * samples {
            return Err(Error::DimensionMismatch {
                what: "plan entries",
                expected: classes * samples,
                actual: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("transport plan"));
        }
        if data.iter().any(|&x| x < T::zero()) {
            return Err(Error::invalid("plan", "negative entry"));
        }
        let mut plan = Self {
            classes,
            samples,
            data,
            row_marginal: Vec::new(),
            col_marginal: Vec::new(),
            residual: T::zero(),
            iterations: 0,
            converged: true,
        };
        plan.row_marginal = plan.row_sums();
        plan.col_marginal = plan.col_sums();
        Ok(plan)
    }

    pub(crate) fn from_solver(
        classes: usize,
        samples: usize,
        data: Vec<T>,
        row_marginal: Vec<T>,
        col_marginal: Vec<T>,
        iterations: usize,
        tolerance: T,
    ) -> Self {
        let mut plan = Self {
            classes,
            samples,
            data,
            row_marginal,
            col_marginal,
            residual: T::zero(),
            iterations,
            converged: false,
        };
        plan.residual = plan.marginal_violation();
        plan.converged = plan.residual <= tolerance;
        plan
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, class: usize, sample: usize) -> T {
        self.data[class * self.samples + sample]
    }

    pub fn row_marginal(&self) -> &[T] {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &[T] {
        &self.col_marginal
    }

    /// Achieved L∞ marginal violation.
    pub fn residual(&self) -> T {
        self.residual
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Errors with the achieved residual when the solver stopped before reaching its tolerance.
    pub fn ensure_converged(&self) -> Result<&Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                residual: self.residual.to_f64().unwrap_or(f64::NAN),
                iterations: self.iterations,
            })
        }
    }

    pub fn row_sums(&self) -> Vec<T> {
        self.data
            .chunks(self.samples.max(1))
            .take(self.classes)
            .map(|r| r.iter().copied().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.samples];
        for row in self.data.chunks(self.samples.max(1)).take(self.classes) {
            for (acc, &x) in out.iter_mut().zip(row) {
                *acc = *acc + x;
            }
        }
        out
    }

    pub fn mass(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn marginal_violation(&self) -> T {
        let rows = self
            .row_sums()
            .into_iter()
            .zip(&self.row_marginal)
            .map(|(s, &m)| (s - m).abs());
        let cols = self
            .col_sums()
            .into_iter()
            .zip(&self.col_marginal)
            .map(|(s, &m)| (s - m).abs());
        rows.chain(cols).fold(T::zero(), T::max)
    }

    /// Transport cost `⟨cost, plan⟩`.
    pub fn objective(&self, cost: &CostMatrix<T>) -> Result<T> {
        if cost.classes() != self.classes || cost.samples() != self.samples {
            return Err(Error::DimensionMismatch {
                what: "cost/plan entries",
                expected: self.data.len(),
                actual: cost.as_slice().len(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(cost.as_slice())
            .map(|(&q, &c)| q * c)
            .sum())
    }
}
