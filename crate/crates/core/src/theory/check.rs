//! Numerical checks of the analytic gradient and coefficient updates.

use rand_distr::{Distribution, StandardNormal};

use super::model::{
    analytic_gradient, batch_loss, coefficient_step, decompose_prompt, PromptModel, SyntheticSample,
};
use super::train::{build_problem, TheoryConfig};
use crate::error::Result;
use crate::loss::LossKind;
use crate::matrix::dot;
use crate::rng;

/// Points this close to a ReLU kink are skipped by finite-difference checks.
pub const KINK_MARGIN: f64 = 1e-4;

/// Smallest distance of any pre-activation `±Wp + Wp_c` from zero.
pub fn kink_distance(model: &PromptModel) -> f64 {
    let (wp, w_plus, w_minus) = model.pre_activations();
    let mut best = f64::INFINITY;
    for (r, &a) in wp.iter().enumerate() {
        for b in [w_plus[r], w_minus[r]] {
            best = best.min((a + b).abs()).min((b - a).abs());
        }
    }
    best
}

/// Central differences of [`batch_loss`] along each coordinate of the prompt.
pub fn finite_difference_gradient(
    model: &PromptModel,
    batch: &[SyntheticSample],
    kind: LossKind,
    step: f64,
) -> Result<Vec<f64>> {
    let mut probe = model.clone();
    (0..model.prompt.len())
        .map(|j| {
            let x = model.prompt[j];
            probe.prompt[j] = x + step;
            let up = batch_loss(&probe, batch, kind)?;
            probe.prompt[j] = x - step;
            let down = batch_loss(&probe, batch, kind)?;
            probe.prompt[j] = x;
            Ok((up - down) / (2.0 * step))
        })
        .collect()
}

/// `|g_fd − g| / |g|`, or `None` when the model sits within [`KINK_MARGIN`] of a kink.
pub fn gradient_relative_error(
    model: &PromptModel,
    batch: &[SyntheticSample],
    kind: LossKind,
    step: f64,
) -> Result<Option<f64>> {
    if kink_distance(model) < KINK_MARGIN {
        return Ok(None);
    }
    let exact = analytic_gradient(model, batch, kind)?;
    let fd = finite_difference_gradient(model, batch, kind, step)?;
    let diff: f64 = exact
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm = dot(&exact, &exact).sqrt();
    Ok(Some(if norm > 0.0 { diff / norm } else { diff }))
}

/// Largest gap between the coefficient changes of one gradient step, measured
/// by decomposing the prompt before and after, and the closed-form row updates.
pub fn coefficient_update_error(
    model: &PromptModel,
    batch: &[SyntheticSample],
    kind: LossKind,
    eta: f64,
) -> Result<f64> {
    let before = decompose_prompt(&model.prompt, &model.init, &model.basis)?;
    let grad = analytic_gradient(model, batch, kind)?;
    let after_prompt: Vec<f64> = model
        .prompt
        .iter()
        .zip(&grad)
        .map(|(p, g)| p - eta * g)
        .collect();
    let after = decompose_prompt(&after_prompt, &model.init, &model.basis)?;
    let predicted = coefficient_step(model, batch, kind, eta)?;
    let mut worst = (after.beta - before.beta - predicted.beta).abs();
    for l in 0..predicted.phi.len() {
        worst = worst.max((after.phi[l] - before.phi[l] - predicted.phi[l]).abs());
    }
    Ok(worst)
}

/// Small random problem whose prompt is moved away from initialization by a
/// standard normal draw in the feature span, so activations are not all zero.
pub fn random_probe(seed: u64, p_noise: f64) -> Result<(PromptModel, Vec<SyntheticSample>)> {
    let config = TheoryConfig {
        n: 24,
        n_test: 1,
        m: 8,
        l: 4,
        p_noise,
        sigma_p: 1.0,
        seed,
        ..TheoryConfig::default()
    };
    let mut problem = build_problem(&config)?;
    let mut rng = rng::stream(seed, 7);
    let model = &mut problem.model;
    let rows: Vec<Vec<f64>> = model.basis.rows().map(<[f64]>::to_vec).collect();
    for w in rows {
        let c: f64 = StandardNormal.sample(&mut rng);
        model
            .prompt
            .iter_mut()
            .zip(&w)
            .for_each(|(p, &x)| *p += c * x);
    }
    Ok((problem.model, problem.train))
}
