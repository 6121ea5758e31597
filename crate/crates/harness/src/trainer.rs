//! Embedding-level training: a trainable prototype matrix plays the role of
//! the learnable prompt. Logits are `temperature · cos(prototype_c, x)` and
//! rows are renormalized after every step.

use std::time::Instant;

use nlprompt_core::loss::{self, LossConfig, LossKind, ProbVector};
use nlprompt_core::noise::few_shot_sample;
use nlprompt_core::purify::{ot_partition, score_purification, Granularity, PartitionResult};
use nlprompt_core::{rng, Error, FeatureMatrix, LabeledDataset};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, Mode, Timing};
use crate::embedding;
use crate::error::{HarnessError, Result};
use crate::synth;

const TEST_SALT: u64 = 0x7E57_0000_0000_0001;
const NOISE_SALT: u64 = 0x0015_E000_0000_0002;
const SHOT_SALT: u64 = 0x5407_0000_0000_0003;
const JITTER_STREAM: u64 = 4;
const SHUFFLE_STREAM: u64 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub mode: Mode,
    pub noise_rate: f64,
    pub seed: u64,
    pub train_loss: f64,
    /// Accuracy on the training features against their true labels.
    pub train_acc: f64,
    pub test_acc: f64,
    pub purif_acc: Option<f64>,
    pub purif_f1: Option<f64>,
    pub clean_fraction: Option<f64>,
    pub histogram: Option<Vec<usize>>,
    pub ot_residual: Option<f64>,
    pub warnings: Vec<String>,
    pub ot_seconds: f64,
    pub step_seconds: f64,
}

/// Training and test data for one seed plus the initial prototypes.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: LabeledDataset<f64>,
    pub test: LabeledDataset<f64>,
    pub prototypes: FeatureMatrix<f64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub prototypes: FeatureMatrix<f64>,
}

fn jitter(protos: &FeatureMatrix<f64>, amount: f64, seed: u64) -> Result<FeatureMatrix<f64>> {
    if amount == 0.0 {
        return Ok(protos.clone());
    }
    let mut rng = rng::stream(seed, JITTER_STREAM);
    let scale = amount / (protos.dim() as f64).sqrt();
    let data = protos
        .as_slice()
        .iter()
        .map(|&p| {
            let z: f64 = StandardNormal.sample(&mut rng);
            p + scale * z
        })
        .collect();
    Ok(FeatureMatrix::new(protos.rows(), protos.dim(), data)?.normalize()?)
}

/// Builds the data for one seed: synthetic clusters (or files), label noise
/// on the training split and optional few-shot subsampling.
pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let (train, test, prototypes, warnings) = match &config.data {
        DataSource::Synthetic {
            classes,
            per_class,
            test_per_class,
            dim,
            tightness,
            prototype_jitter,
        } => {
            let s = synth::make_synthetic_embeddings(*classes, *per_class, *dim, *tightness, seed)?;
            let test = synth::sample_clusters(
                &s.prototypes,
                *test_per_class,
                *tightness,
                seed ^ TEST_SALT,
            )?;
            let init = jitter(&s.prototypes, *prototype_jitter, seed)?;
            (s.dataset, test, init, s.warnings)
        }
        DataSource::Files {
            train,
            test,
            prototypes,
        } => {
            let mut tr = embedding::load_features(train)?;
            // A positive rate re-noises from the truth; otherwise stored labels are kept.
            if config.noise.rate > 0.0 {
                if let Some(truth) = tr.true_labels.clone() {
                    tr.observed_labels = truth;
                }
            }
            let te = embedding::load_features(test)?;
            let protos = embedding::load_matrix(prototypes)?;
            (tr, te, protos.normalize()?, Vec::new())
        }
    };
    let mut spec = config.noise;
    spec.seed = seed ^ NOISE_SALT;
    let mut train = if spec.rate > 0.0 {
        train.with_noise(&spec)?
    } else {
        train
    };
    if config.shots > 0 {
        train = few_shot_sample(&train, config.shots, seed ^ SHOT_SALT)?;
    }
    Ok(Prepared {
        train,
        test,
        prototypes,
        warnings,
    })
}

fn cosine_lr(base: f64, epoch: usize, epochs: usize) -> f64 {
    0.5 * base * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
}

fn probabilities(protos: &FeatureMatrix<f64>, x: &[f64], scale: f64) -> Result<ProbVector<f64>> {
    let logits: Vec<f64> = (0..protos.rows())
        .map(|c| scale * nlprompt_core::matrix::dot(protos.row(c), x))
        .collect();
    Ok(loss::softmax(&logits)?)
}

/// Fraction of samples whose most similar prototype is the reference label.
pub fn accuracy(protos: &FeatureMatrix<f64>, data: &LabeledDataset<f64>) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let pred = nlprompt_core::purify::zero_shot_labels(protos, &data.features)?;
    let hits = pred
        .iter()
        .zip(data.reference_labels())
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

struct Partitioned {
    result: PartitionResult,
    residual: f64,
    converged: bool,
}

fn partition_with(
    protos: &FeatureMatrix<f64>,
    data: &LabeledDataset<f64>,
    config: &ExperimentConfig,
    granularity: Granularity,
) -> Result<Partitioned> {
    let ot = ot_partition(
        protos,
        &data.features,
        &data.observed_labels,
        &config.sinkhorn,
        config.ot_temperature,
        granularity,
    )?;
    Ok(Partitioned {
        residual: ot.residual(),
        converged: ot.converged(),
        result: ot.partition,
    })
}

fn non_finite(epoch: usize, records: &[MetricsRecord]) -> HarnessError {
    HarnessError::NonFiniteLoss {
        epoch,
        records: records.to_vec(),
    }
}

/// Trains `prototypes` on `train` and evaluates on `test` every epoch.
/// The mode in `config` selects NLPrompt or a single-loss baseline.
pub fn train(
    train: &LabeledDataset<f64>,
    test: &LabeledDataset<f64>,
    prototypes: &FeatureMatrix<f64>,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<RunOutput> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set").into());
    }
    if prototypes.rows() != train.class_count {
        return Err(Error::DimensionMismatch {
            what: "prototype rows",
            expected: train.class_count,
            actual: prototypes.rows(),
        }
        .into());
    }
    let mut protos = if prototypes.is_normalized() {
        prototypes.clone()
    } else {
        prototypes.clone().normalize()?
    };
    let loss_config = LossConfig {
        gce_q: config.gce_q,
        clamp_ce: false,
    };
    let single = match config.mode {
        Mode::Nlprompt => None,
        Mode::CeOnly => Some(LossKind::Ce),
        Mode::MaeOnly => Some(LossKind::Mae),
        Mode::Gce => Some(LossKind::Gce),
    };
    let (classes, dim) = (protos.rows(), protos.dim());
    let mut rng = rng::stream(seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = cosine_lr(config.lr, epoch, config.epochs);
        let mut warnings = Vec::new();
        let mut ot_seconds = 0.0;
        let mut step_seconds = 0.0;
        order.shuffle(&mut rng);

        let mut clean = vec![true; train.len()];
        let mut epoch_partition = None;
        let mut residual: Option<f64> = None;
        if single.is_none() && config.granularity == Granularity::Dataset {
            let start = Instant::now();
            let p = partition_with(&protos, train, config, Granularity::Dataset)?;
            ot_seconds += start.elapsed().as_secs_f64();
            if !p.converged {
                warnings.push(format!(
                    "sinkhorn did not converge, residual {:e}",
                    p.residual
                ));
            }
            residual = Some(p.residual);
            clean = p.result.clean_mask();
            epoch_partition = Some(p.result);
        }

        let mut pseudo_all = vec![0usize; train.len()];
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            if single.is_none() {
                if let Granularity::Batch(_) = config.granularity {
                    let start = Instant::now();
                    let sub = train.subset(batch);
                    let p = partition_with(&protos, &sub, config, Granularity::Dataset)?;
                    ot_seconds += start.elapsed().as_secs_f64();
                    if !p.converged {
                        warnings.push(format!(
                            "sinkhorn did not converge, residual {:e}",
                            p.residual
                        ));
                    }
                    residual = Some(residual.unwrap_or(0.0).max(p.residual));
                    for (k, &i) in batch.iter().enumerate() {
                        clean[i] = p.result.clean_mask()[k];
                        pseudo_all[i] = p.result.pseudo_labels[k];
                    }
                }
            }
            let start = Instant::now();
            let mut grad = vec![0.0; classes * dim];
            for &i in batch {
                let x = train.features.row(i);
                let y = train.observed_labels[i];
                let s = probabilities(&protos, x, config.temperature)?;
                let kind = single.unwrap_or(if clean[i] {
                    LossKind::Ce
                } else {
                    LossKind::Mae
                });
                let value = match loss::single_loss(kind, &s, y, &loss_config) {
                    Ok(v) => v,
                    Err(Error::InfiniteLoss) => f64::INFINITY,
                    Err(e) => return Err(e.into()),
                };
                if !value.is_finite() {
                    return Err(non_finite(epoch + 1, &records));
                }
                loss_sum += value;
                let dz = loss::logit_gradient(kind, &s, y, config.gce_q)?;
                for (c, g) in dz.iter().enumerate() {
                    let w = g * config.temperature / batch.len() as f64;
                    grad[c * dim..(c + 1) * dim]
                        .iter_mut()
                        .zip(x)
                        .for_each(|(a, &xv)| *a += w * xv);
                }
            }
            if lr > 0.0 {
                let mut data = protos.into_vec();
                data.iter_mut().zip(&grad).for_each(|(p, g)| *p -= lr * g);
                protos = FeatureMatrix::new(classes, dim, data)?.normalize()?;
            }
            step_seconds += start.elapsed().as_secs_f64();
        }

        let train_loss = loss_sum / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(non_finite(epoch + 1, &records));
        }
        let (mut purif_acc, mut purif_f1, mut clean_fraction, mut histogram) =
            (None, None, None, None);
        if single.is_none() {
            let part = match epoch_partition {
                Some(p) => p,
                None => nlprompt_core::purify::partition(&train.observed_labels, &pseudo_all)?,
            };
            clean_fraction = Some(part.clean_fraction());
            let mut h = vec![0usize; classes];
            part.pseudo_labels.iter().for_each(|&y| h[y] += 1);
            histogram = Some(h);
            if let Some(truth) = train.true_labels.as_deref() {
                let score = score_purification(
                    &part,
                    Some(truth),
                    &train.observed_labels,
                    config.positive,
                )?;
                purif_acc = Some(score.accuracy);
                purif_f1 = Some(score.f1);
            }
        }
        if config.timing == Timing::Off {
            ot_seconds = 0.0;
            step_seconds = 0.0;
        }
        records.push(MetricsRecord {
            epoch: epoch + 1,
            mode: config.mode,
            noise_rate: config.noise.rate,
            seed,
            train_loss,
            train_acc: accuracy(&protos, train)?,
            test_acc: accuracy(&protos, test)?,
            purif_acc,
            purif_f1,
            clean_fraction,
            histogram,
            ot_residual: residual,
            warnings,
            ot_seconds,
            step_seconds,
        });
    }
    Ok(RunOutput {
        records,
        prototypes: protos,
    })
}

/// NLPrompt: OT partition, then CE on the clean part and MAE on the rest.
pub fn run_nlprompt(
    train_set: &LabeledDataset<f64>,
    test: &LabeledDataset<f64>,
    prototypes: &FeatureMatrix<f64>,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<RunOutput> {
    let mut c = config.clone();
    c.mode = Mode::Nlprompt;
    train(train_set, test, prototypes, &c, seed)
}

/// Single-loss baseline; `config.mode` must not be `nlprompt`.
pub fn run_baseline(
    train_set: &LabeledDataset<f64>,
    test: &LabeledDataset<f64>,
    prototypes: &FeatureMatrix<f64>,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<RunOutput> {
    if config.mode == Mode::Nlprompt {
        return Err(HarnessError::Config(
            "baseline mode must be ce_only, mae_only or gce".into(),
        ));
    }
    train(train_set, test, prototypes, config, seed)
}

/// Prepares data for `seed` and trains once.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let prepared = prepare(config, seed)?;
    let mut out = train(
        &prepared.train,
        &prepared.test,
        &prepared.prototypes,
        config,
        seed,
    )?;
    if let Some(first) = out.records.first_mut() {
        first.warnings.extend(prepared.warnings);
    }
    Ok(out)
}

/// Grid over noise rates × seeds × modes, run in parallel. Records come back
/// ordered by noise rate, then seed, then mode, then epoch.
pub fn run_sweep(
    config: &ExperimentConfig,
    modes: &[Mode],
    noise_rates: &[f64],
) -> Result<Vec<MetricsRecord>> {
    let jobs: Vec<(f64, u64, Mode)> = noise_rates
        .iter()
        .flat_map(|&r| {
            config
                .seeds
                .iter()
                .flat_map(move |&s| modes.iter().map(move |&m| (r, s, m)))
        })
        .collect();
    let results: Vec<Result<RunOutput>> = jobs
        .par_iter()
        .map(|&(rate, seed, mode)| run_seed(&config.job(mode, rate), seed))
        .collect();
    let mut records = Vec::new();
    for r in results {
        records.extend(r?.records);
    }
    Ok(records)
}
