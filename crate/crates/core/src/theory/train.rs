use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{
    analytic_gradient, batch_loss, decompose_prompt, mean_true_probability, measure_test_loss,
    sample_dataset, FeatureBasis, PromptModel, SyntheticSample,
};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::matrix::dot;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryConfig {
    pub loss_kind: LossKind,
    /// Training samples.
    pub n: usize,
    /// Clean test samples.
    pub n_test: usize,
    pub p_noise: f64,
    pub sigma_p: f64,
    /// Latent dimension; prompts live in `R^{m+1}`.
    pub m: usize,
    /// Number of task-irrelevant features.
    pub l: usize,
    pub eta: f64,
    pub iters: usize,
    /// Prompt initialization standard deviation.
    pub sigma_0: f64,
    pub seed: u64,
    pub mu_norm: f64,
    pub xi_norm: f64,
    /// Standard deviation of the fixed class prompts.
    pub class_prompt_std: f64,
    /// Record the trajectory every this many iterations (the last one is always kept).
    pub record_every: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::Mae,
            n: 200,
            n_test: 2000,
            p_noise: 0.3,
            sigma_p: 0.5,
            m: 50,
            l: 20,
            eta: 0.01,
            iters: 1000,
            sigma_0: 0.01,
            seed: 0,
            mu_norm: 1.0,
            xi_norm: 1.0,
            class_prompt_std: 3.0,
            record_every: 1,
        }
    }
}

impl TheoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n_test == 0 {
            return Err(Error::invalid("n", "sample counts must be positive"));
        }
        if self.l + 1 > self.m {
            return Err(Error::invalid("l", "need l + 1 <= m orthogonal features"));
        }
        for (name, v) in [
            ("eta", self.eta),
            ("sigma_0", self.sigma_0),
            ("mu_norm", self.mu_norm),
            ("xi_norm", self.xi_norm),
            ("class_prompt_std", self.class_prompt_std),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every", "must be positive"));
        }
        match self.loss_kind {
            LossKind::Ce | LossKind::Mae => Ok(()),
            _ => Err(Error::invalid("loss_kind", "must be ce or mae")),
        }
    }
}

/// Model at initialization plus train and test sets. Depends only on the seed
/// and the data/model parameters, not on the loss, so CE and MAE runs with the
/// same seed start from the same point.
#[derive(Clone, Debug)]
pub struct Problem {
    pub model: PromptModel,
    pub train: Vec<SyntheticSample>,
    pub test: Vec<SyntheticSample>,
}

pub fn build_problem(config: &TheoryConfig) -> Result<Problem> {
    config.validate()?;
    let d = config.m + 1;
    let mut rng = rng::seeded(config.seed);
    let basis = FeatureBasis::random(
        d,
        config.l,
        config.m,
        config.mu_norm,
        config.xi_norm,
        &mut rng,
    )?;
    let init_dist = Normal::new(0.0, config.sigma_0).expect("positive std");
    let init: Vec<f64> = (0..d).map(|_| init_dist.sample(&mut rng)).collect();
    let class_dist = Normal::new(0.0, config.class_prompt_std).expect("positive std");
    let mut plus: Vec<f64> = (0..d).map(|_| class_dist.sample(&mut rng)).collect();
    let mut minus: Vec<f64> = (0..d).map(|_| class_dist.sample(&mut rng)).collect();
    // reflect the mu component so that mu·p_+ >= 0 >= mu·p_-
    let mu = basis.mu().to_vec();
    let mu_sq = dot(&mu, &mu);
    for (v, want_positive) in [(&mut plus, true), (&mut minus, false)] {
        let c = dot(v, &mu);
        if (c < 0.0 && want_positive) || (c > 0.0 && !want_positive) {
            v.iter_mut()
                .zip(&mu)
                .for_each(|(x, &m)| *x -= 2.0 * c / mu_sq * m);
        }
    }
    let model = PromptModel::new(basis, init, plus, minus, config.sigma_p)?;
    let train = sample_dataset(
        config.n,
        config.p_noise,
        config.sigma_p,
        config.l,
        config.seed.wrapping_add(1),
    )?;
    let test = sample_dataset(
        config.n_test,
        0.0,
        config.sigma_p,
        config.l,
        config.seed.wrapping_add(2),
    )?;
    Ok(Problem { model, train, test })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub iteration: usize,
    pub alpha: f64,
    pub beta: f64,
    pub phi: Vec<f64>,
    pub train_loss: f64,
    pub test_error: f64,
    pub mean_s_y: f64,
    /// `|p − reconstruct(α, β, φ)| / |p|`.
    pub reconstruction_error: f64,
}

impl TrajectoryRecord {
    pub fn snr(&self) -> f64 {
        let worst = self.phi.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        self.beta / worst
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptTrajectory {
    pub loss_kind: LossKind,
    pub records: Vec<TrajectoryRecord>,
}

impl PromptTrajectory {
    pub fn last(&self) -> &TrajectoryRecord {
        self.records
            .last()
            .expect("trajectory always holds the initial record")
    }

    /// Iterations at which the recorded train loss went up.
    pub fn loss_increases(&self) -> Vec<usize> {
        self.records
            .windows(2)
            .filter(|w| w[1].train_loss > w[0].train_loss)
            .map(|w| w[1].iteration)
            .collect()
    }
}

fn record(
    model: &PromptModel,
    train: &[SyntheticSample],
    test: &[SyntheticSample],
    kind: LossKind,
    iteration: usize,
) -> Result<TrajectoryRecord> {
    let dec = decompose_prompt(&model.prompt, &model.init, &model.basis)?;
    let rebuilt = dec.reconstruct(&model.init, &model.basis);
    let diff: f64 = model
        .prompt
        .iter()
        .zip(&rebuilt)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm = dot(&model.prompt, &model.prompt).sqrt();
    Ok(TrajectoryRecord {
        iteration,
        alpha: dec.alpha,
        beta: dec.beta,
        phi: dec.phi,
        train_loss: batch_loss(model, train, kind)?,
        test_error: measure_test_loss(model, test)?,
        mean_s_y: mean_true_probability(model, train),
        reconstruction_error: if norm > 0.0 { diff / norm } else { diff },
    })
}

/// Full-batch gradient descent on `model.prompt`, starting from its current value.
pub fn train_on(
    model: &mut PromptModel,
    train: &[SyntheticSample],
    test: &[SyntheticSample],
    kind: LossKind,
    eta: f64,
    iters: usize,
    record_every: usize,
) -> Result<PromptTrajectory> {
    let every = record_every.max(1);
    let mut records = vec![record(model, train, test, kind, 0)?];
    for t in 1..=iters {
        let grad = analytic_gradient(model, train, kind)?;
        model
            .prompt
            .iter_mut()
            .zip(&grad)
            .for_each(|(p, g)| *p -= eta * g);
        if model.prompt.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { iteration: t });
        }
        if t % every == 0 || t == iters {
            let rec = record(model, train, test, kind, t)?;
            if !rec.train_loss.is_finite() {
                return Err(Error::Diverged { iteration: t });
            }
            records.push(rec);
        }
    }
    Ok(PromptTrajectory {
        loss_kind: kind,
        records,
    })
}

pub fn train_prompt(config: &TheoryConfig) -> Result<PromptTrajectory> {
    let mut problem = build_problem(config)?;
    train_on(
        &mut problem.model,
        &problem.train,
        &problem.test,
        config.loss_kind,
        config.eta,
        config.iters,
        config.record_every,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub ce_error: f64,
    pub mae_error: f64,
    pub ce_snr: f64,
    pub mae_snr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremSuite {
    pub outcomes: Vec<SeedOutcome>,
    /// Fraction of seeds with MAE test error ≤ CE test error.
    pub mae_not_worse: f64,
    pub mean_ce_error: f64,
    pub mean_mae_error: f64,
    /// Fraction of seeds where MAE ends with the larger `β / max|φ|`.
    pub snr_mae_larger: f64,
}

impl TheoremSuite {
    pub fn summary(&self) -> String {
        format!(
            "seeds={} mae_not_worse_fraction={:.4} mean_ce_error={:.6} mean_mae_error={:.6} snr_mae_larger_fraction={:.4}",
            self.outcomes.len(),
            self.mae_not_worse,
            self.mean_ce_error,
            self.mean_mae_error,
            self.snr_mae_larger
        )
    }
}

/// Trains CE and MAE prompts from the same initialization for every seed
/// (seeds run in parallel, results kept in seed order).
pub fn theorem_suite(base: &TheoryConfig, seeds: &[u64]) -> Result<TheoremSuite> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed list"));
    }
    let outcomes = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TheoryConfig {
                seed,
                record_every: base.iters.max(1),
                ..base.clone()
            };
            let problem = build_problem(&cfg)?;
            let run = |kind| {
                let mut model = problem.model.clone();
                train_on(
                    &mut model,
                    &problem.train,
                    &problem.test,
                    kind,
                    cfg.eta,
                    cfg.iters,
                    cfg.record_every,
                )
            };
            let ce = run(LossKind::Ce)?;
            let mae = run(LossKind::Mae)?;
            Ok(SeedOutcome {
                seed,
                ce_error: ce.last().test_error,
                mae_error: mae.last().test_error,
                ce_snr: ce.last().snr(),
                mae_snr: mae.last().snr(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let k = outcomes.len() as f64;
    Ok(TheoremSuite {
        mae_not_worse: outcomes
            .iter()
            .filter(|o| o.mae_error <= o.ce_error)
            .count() as f64
            / k,
        mean_ce_error: outcomes.iter().map(|o| o.ce_error).sum::<f64>() / k,
        mean_mae_error: outcomes.iter().map(|o| o.mae_error).sum::<f64>() / k,
        snr_mae_larger: outcomes.iter().filter(|o| o.mae_snr > o.ce_snr).count() as f64 / k,
        outcomes,
    })
}
