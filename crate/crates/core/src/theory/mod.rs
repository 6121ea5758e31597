//! Binary prompt-learning model with orthogonal task-relevant and
//! task-irrelevant features.
//!
//! The text encoder is `h_c = relu(Wp + Wp_c) − relu(−Wp + Wp_c)` with the rows
//! of `W` equal to the features; image features are `(y, x_1, …, x_L)` with
//! Gaussian task-irrelevant coordinates. Training by full-batch gradient
//! descent keeps the prompt in `span(p⁰, μ, ξ_1, …, ξ_L)`, so its coefficients
//! `(α, β, φ)` can be tracked exactly.

pub mod check;
mod model;
mod ratios;
mod train;

pub use model::{
    activation_factors, analytic_gradient, batch_loss, class_index, coefficient_step,
    decompose_prompt, forward, mean_true_probability, measure_test_loss, sample_dataset,
    text_encode, ActivationFactor, CoefficientStep, Decomposition, FeatureBasis, Forward,
    PromptModel, SyntheticSample,
};
pub use ratios::{expected_update_ratios, expected_updates, ExpectedUpdates, UpdateRatios};
pub use train::{
    build_problem, theorem_suite, train_on, train_prompt, Problem, PromptTrajectory, SeedOutcome,
    TheoremSuite, TheoryConfig, TrajectoryRecord,
};
