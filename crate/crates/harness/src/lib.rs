//! Embedding files, synthetic data, NLPrompt training at the embedding level,
//! reports and the `nlprompt` command line.
//!
//! The learnable prompt is replaced by a trainable prototype matrix: each
//! class row starts at the class text feature, logits are scaled cosine
//! similarities and rows are renormalized after every step.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod report;
pub mod synth;
pub mod trainer;

pub use config::{ExperimentConfig, Mode};
pub use error::{HarnessError, Result};
pub use trainer::{run_baseline, run_nlprompt, MetricsRecord, RunOutput};
