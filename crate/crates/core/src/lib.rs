//! Core numerics for noisy-label prompt learning.
//!
//! * [`ot`]: entropic optimal transport between class prototypes and samples,
//!   pseudo-label decoding and an exhaustive assignment oracle.
//! * [`noise`]: seeded label-noise injection and few-shot subsampling.
//! * [`loss`]: CE / MAE / GCE losses, the harmonized clean/noisy loss and
//!   gradient coefficients.
//! * [`purify`]: clean/noisy partitioning and purification scoring.
//! * [`theory`]: the binary prompt-learning model with task-relevant and
//!   task-irrelevant features, analytic gradients and coefficient dynamics.
//!
//! The OT, loss and matrix code is generic over [`Scalar`] (`f32` or `f64`);
//! the closed-form update ratios are generic over [`Field`] so they can also be
//! evaluated exactly with [`ExactRatio`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod loss;
pub mod matrix;
pub mod noise;
pub mod ot;
pub mod purify;
pub mod rng;
pub mod scalar;
pub mod theory;

pub use error::{Error, Result};
pub use matrix::FeatureMatrix;
pub use noise::LabeledDataset;
pub use scalar::{Field, Scalar};

/// Exact rational arithmetic, used to evaluate closed-form ratios without rounding.
pub type ExactRatio = num_rational::BigRational;

pub type FeatureMatrixF64 = matrix::FeatureMatrix<f64>;
pub type FeatureMatrixF32 = matrix::FeatureMatrix<f32>;
pub type CostMatrixF64 = ot::CostMatrix<f64>;
pub type CostMatrixF32 = ot::CostMatrix<f32>;
pub type TransportPlanF64 = ot::TransportPlan<f64>;
pub type TransportPlanF32 = ot::TransportPlan<f32>;
pub type SinkhornConfigF64 = ot::SinkhornConfig<f64>;
pub type ProbVectorF64 = loss::ProbVector<f64>;
pub type LabeledDatasetF64 = noise::LabeledDataset<f64>;
