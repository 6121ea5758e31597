use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("row {row} is not unit-norm (norm {norm})")]
    NotNormalized { row: usize, norm: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("marginal {which} is not a strictly positive probability vector")]
    InvalidMarginal { which: &'static str },
    #[error("numerical breakdown in sinkhorn at iteration {iteration}; use log-domain iterations for small epsilon")]
    NumericalBreakdown { iteration: usize },
    #[error("sinkhorn did not converge: residual {residual:e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },
    #[error("oracle instance too large: n = {n}, limit {limit}")]
    OracleTooLarge { n: usize, limit: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("infinite loss: probability of target class is zero")]
    InfiniteLoss,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),
    #[error("missing ground-truth labels")]
    MissingTrueLabels,
    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: usize },
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
