use serde::{Deserialize, Serialize};

use super::{build_cost_matrix, CostMatrix, TransportPlan};
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::scalar::{lit, Scalar};

/// Below this entropic coefficient the log-domain iterations are used by default.
pub const LOG_DOMAIN_THRESHOLD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig<T> {
    /// Entropic regularization coefficient.
    pub epsilon: T,
    pub max_iters: usize,
    /// Stop once the L∞ marginal violation is at most this.
    pub tolerance: T,
    pub log_domain: bool,
}

impl<T: Scalar> SinkhornConfig<T> {
    /// Defaults: tolerance 1e-9, 100k iterations, log domain iff `epsilon < 0.01`.
    pub fn new(epsilon: T) -> Self {
        Self {
            epsilon,
            max_iters: 100_000,
            tolerance: lit(1e-9),
            log_domain: epsilon < lit(LOG_DOMAIN_THRESHOLD),
        }
    }

    pub fn with_tolerance(mut self, tolerance: T) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_log_domain(mut self, log_domain: bool) -> Self {
        self.log_domain = log_domain;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > T::zero()) || !self.epsilon.is_finite() {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        if !(self.tolerance > T::zero()) {
            return Err(Error::invalid("tolerance", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

pub fn uniform_marginal<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::one() / T::from_usize(n).expect("count fits"); n]
}

fn check_marginal<T: Scalar>(m: &[T], len: usize, which: &'static str) -> Result<()> {
    if m.len() != len {
        return Err(Error::DimensionMismatch {
            what: which,
            expected: len,
            actual: m.len(),
        });
    }
    if m.iter().any(|&x| !(x > T::zero()) || !x.is_finite()) {
        return Err(Error::InvalidMarginal { which });
    }
    let total: T = m.iter().copied().sum();
    let tol = T::unit_tolerance() * T::from_usize(len.max(1)).unwrap().sqrt();
    if (total - T::one()).abs() > tol {
        return Err(Error::InvalidMarginal { which });
    }
    Ok(())
}

/// Entropic OT by alternating row/column scaling.
///
/// Returns a plan whose [`converged`](TransportPlan::converged) flag reports
/// whether the L∞ marginal violation reached `config.tolerance` within
/// `config.max_iters`; the achieved violation is always available as the
/// plan's residual.
pub fn sinkhorn<T: Scalar>(
    cost: &CostMatrix<T>,
    row_marginal: &[T],
    col_marginal: &[T],
    config: &SinkhornConfig<T>,
) -> Result<TransportPlan<T>> {
    config.validate()?;
    check_marginal(row_marginal, cost.classes(), "row")?;
    check_marginal(col_marginal, cost.samples(), "column")?;
    let (data, iterations) = if config.log_domain {
        log_domain(cost, row_marginal, col_marginal, config)?
    } else {
        scaling(cost, row_marginal, col_marginal, config)?
    };
    Ok(TransportPlan::from_solver(
        cost.classes(),
        cost.samples(),
        data,
        row_marginal.to_vec(),
        col_marginal.to_vec(),
        iterations,
        config.tolerance,
    ))
}

fn scaling<T: Scalar>(
    cost: &CostMatrix<T>,
    a: &[T],
    b: &[T],
    config: &SinkhornConfig<T>,
) -> Result<(Vec<T>, usize)> {
    let (c, n) = (cost.classes(), cost.samples());
    let eps = config.epsilon;
    // Subtracting each column's minimum only rescales the column potential.
    let mut kernel = cost.as_slice().to_vec();
    for i in 0..n {
        let min = (0..c)
            .map(|k| kernel[k * n + i])
            .fold(T::infinity(), T::min);
        for k in 0..c {
            kernel[k * n + i] = (-(kernel[k * n + i] - min) / eps).exp();
        }
    }
    let mut u = vec![T::one(); c];
    let mut v = vec![T::one(); n];
    let mut kv = vec![T::zero(); c];
    let mut ktu = vec![T::zero(); n];
    let mut iterations = 0;
    for it in 0..config.max_iters {
        for (k, row) in kernel.chunks_exact(n).enumerate() {
            kv[k] = row.iter().zip(&v).map(|(&x, &y)| x * y).sum();
        }
        if it > 0 {
            let err = (0..c)
                .map(|k| (u[k] * kv[k] - a[k]).abs())
                .fold(T::zero(), T::max);
            if !err.is_finite() {
                return Err(Error::NumericalBreakdown { iteration: it });
            }
            if err <= config.tolerance {
                break;
            }
        }
        for k in 0..c {
            u[k] = a[k] / kv[k];
        }
        ktu.iter_mut().for_each(|x| *x = T::zero());
        for (k, row) in kernel.chunks_exact(n).enumerate() {
            let uk = u[k];
            for (acc, &x) in ktu.iter_mut().zip(row) {
                *acc = *acc + x * uk;
            }
        }
        for i in 0..n {
            v[i] = b[i] / ktu[i];
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::NumericalBreakdown { iteration: it });
        }
        iterations = it + 1;
    }
    for (k, row) in kernel.chunks_exact_mut(n).enumerate() {
        for (x, &vi) in row.iter_mut().zip(&v) {
            *x = u[k] * *x * vi;
        }
    }
    Ok((kernel, iterations))
}

fn log_sum_exp<T: Scalar>(values: impl Iterator<Item = T> + Clone) -> T {
    let max = values.clone().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + values.map(|x| (x - max).exp()).sum::<T>().ln()
}

fn log_domain<T: Scalar>(
    cost: &CostMatrix<T>,
    a: &[T],
    b: &[T],
    config: &SinkhornConfig<T>,
) -> Result<(Vec<T>, usize)> {
    let (c, n) = (cost.classes(), cost.samples());
    let eps = config.epsilon;
    let scaled: Vec<T> = cost.as_slice().iter().map(|&x| x / eps).collect();
    let log_a: Vec<T> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<T> = b.iter().map(|x| x.ln()).collect();
    // Potentials in units of epsilon.
    let mut f = vec![T::zero(); c];
    let mut g = vec![T::zero(); n];
    let mut row_lse = vec![T::zero(); c];
    let mut iterations = 0;
    for it in 0..config.max_iters {
        for k in 0..c {
            let row = &scaled[k * n..(k + 1) * n];
            row_lse[k] = log_sum_exp(row.iter().zip(&g).map(|(&m, &gi)| gi - m));
        }
        if it > 0 {
            let err = (0..c)
                .map(|k| ((f[k] + row_lse[k]).exp() - a[k]).abs())
                .fold(T::zero(), T::max);
            if !err.is_finite() {
                return Err(Error::NumericalBreakdown { iteration: it });
            }
            if err <= config.tolerance {
                break;
            }
        }
        for k in 0..c {
            f[k] = log_a[k] - row_lse[k];
        }
        for i in 0..n {
            let lse = log_sum_exp((0..c).map(|k| f[k] - scaled[k * n + i]));
            g[i] = log_b[i] - lse;
        }
        if f.iter().chain(&g).any(|x| !x.is_finite()) {
            return Err(Error::NumericalBreakdown { iteration: it });
        }
        iterations = it + 1;
    }
    let mut plan = Vec::with_capacity(c * n);
    for k in 0..c {
        for i in 0..n {
            plan.push((f[k] + g[i] - scaled[k * n + i]).exp());
        }
    }
    Ok((plan, iterations))
}

/// OT between prototypes and samples with uniform marginals `1/C` and `1/N`.
pub fn solve_prompt_ot<T: Scalar>(
    prototypes: &FeatureMatrix<T>,
    samples: &FeatureMatrix<T>,
    config: &SinkhornConfig<T>,
    temperature: T,
) -> Result<TransportPlan<T>> {
    let cost = build_cost_matrix(prototypes, samples, temperature)?;
    sinkhorn(
        &cost,
        &uniform_marginal(cost.classes()),
        &uniform_marginal(cost.samples()),
        config,
    )
}
