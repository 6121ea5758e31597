//! Experiment configuration: defaults, a `key = value` file format and
//! command-line overrides using the same keys.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nlprompt_core::noise::{NoiseKind, NoiseSpec};
use nlprompt_core::ot::SinkhornConfig;
use nlprompt_core::purify::{Granularity, PositiveClass};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Nlprompt,
    CeOnly,
    MaeOnly,
    Gce,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Nlprompt, Mode::CeOnly, Mode::MaeOnly, Mode::Gce];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Nlprompt => "nlprompt",
            Mode::CeOnly => "ce_only",
            Mode::MaeOnly => "mae_only",
            Mode::Gce => "gce",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown mode `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timing {
    /// Wall-clock seconds per phase.
    Wall,
    /// Timing columns written as 0 so the CSV is reproducible byte for byte.
    Off,
}

/// Where training data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// Clusters regenerated from the run seed.
    Synthetic {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
        dim: usize,
        tightness: f64,
        /// Perturbation of the initial prototypes relative to the cluster centres.
        prototype_jitter: f64,
    },
    /// Embedding files; noise is injected into the training labels per seed.
    Files {
        train: PathBuf,
        test: PathBuf,
        prototypes: PathBuf,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            classes: 10,
            per_class: 16,
            test_per_class: 100,
            dim: 64,
            tightness: 1.0,
            prototype_jitter: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub lr: f64,
    /// Logit scale applied to cosine similarities.
    pub temperature: f64,
    /// Softmax temperature inside the OT cost.
    pub ot_temperature: f64,
    pub sinkhorn: SinkhornConfig<f64>,
    pub noise: NoiseSpec,
    /// Samples per class drawn from the training set; 0 keeps everything.
    pub shots: usize,
    pub granularity: Granularity,
    pub batch_size: usize,
    pub gce_q: f64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub positive: PositiveClass,
    pub timing: Timing,
    pub data: DataSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Nlprompt,
            epochs: 50,
            lr: 0.002,
            temperature: 100.0,
            ot_temperature: 1.0,
            sinkhorn: SinkhornConfig::new(0.05),
            noise: NoiseSpec::new(NoiseKind::Symmetric, 0.0, 0),
            shots: 0,
            granularity: Granularity::Dataset,
            batch_size: 32,
            gce_q: nlprompt_core::loss::DEFAULT_GCE_Q,
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            positive: PositiveClass::Clean,
            timing: Timing::Wall,
            data: DataSource::default(),
        }
    }
}

/// Every key accepted in config files and as `--key value` flags.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("mode", "nlprompt | ce_only | mae_only | gce"),
    ("epochs", "training epochs (0 allowed)"),
    ("lr", "initial learning rate, cosine annealed"),
    ("temperature", "logit scale on cosine similarity"),
    ("ot_temperature", "softmax temperature of the OT cost"),
    ("epsilon", "entropic regularization"),
    ("sinkhorn_tol", "marginal violation tolerance"),
    ("sinkhorn_max_iters", "Sinkhorn iteration cap"),
    ("log_domain", "auto | true | false"),
    ("noise_kind", "symmetric | asymmetric | rademacher"),
    ("noise_rate", "label flip rate"),
    ("shots", "samples per class, 0 = all"),
    ("granularity", "dataset | batch"),
    ("batch_size", "mini-batch size (also the OT batch)"),
    ("gce_q", "GCE exponent"),
    ("seeds", "comma-separated seed list"),
    ("output_dir", "directory for metrics and manifest"),
    ("positive", "purification F1 positive class: clean | noisy"),
    ("timing", "wall | off"),
    ("classes", "synthetic: class count"),
    ("per_class", "synthetic: training samples per class"),
    ("test_per_class", "synthetic: test samples per class"),
    ("dim", "synthetic: embedding dimension"),
    ("tightness", "synthetic: cluster tightness"),
    (
        "prototype_jitter",
        "synthetic: initial prototype perturbation",
    ),
    ("train_file", "embedding file with training data"),
    ("test_file", "embedding file with test data"),
    ("prototype_file", "embedding file with class prototypes"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| HarnessError::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "mode" => self.mode = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "temperature" => self.temperature = parse(key, v)?,
            "ot_temperature" => self.ot_temperature = parse(key, v)?,
            "epsilon" => {
                let eps: f64 = parse(key, v)?;
                let auto = self.sinkhorn.log_domain
                    == SinkhornConfig::new(self.sinkhorn.epsilon).log_domain;
                self.sinkhorn.epsilon = eps;
                if auto {
                    self.sinkhorn.log_domain = SinkhornConfig::new(eps).log_domain;
                }
            }
            "sinkhorn_tol" => self.sinkhorn.tolerance = parse(key, v)?,
            "sinkhorn_max_iters" => self.sinkhorn.max_iters = parse(key, v)?,
            "log_domain" => {
                self.sinkhorn.log_domain = match v {
                    "auto" => SinkhornConfig::new(self.sinkhorn.epsilon).log_domain,
                    _ => parse(key, v)?,
                }
            }
            "noise_kind" => self.noise.kind = parse(key, v)?,
            "noise_rate" => self.noise.rate = parse(key, v)?,
            "shots" => self.shots = parse(key, v)?,
            "granularity" => {
                self.granularity = match v {
                    "dataset" => Granularity::Dataset,
                    "batch" => Granularity::Batch(self.batch_size),
                    _ => return Err(HarnessError::Config(format!("granularity: unknown `{v}`"))),
                }
            }
            "batch_size" => {
                self.batch_size = parse(key, v)?;
                if let Granularity::Batch(_) = self.granularity {
                    self.granularity = Granularity::Batch(self.batch_size);
                }
            }
            "gce_q" => self.gce_q = parse(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "positive" => {
                self.positive = match v {
                    "clean" => PositiveClass::Clean,
                    "noisy" => PositiveClass::Noisy,
                    _ => return Err(HarnessError::Config(format!("positive: unknown `{v}`"))),
                }
            }
            "timing" => {
                self.timing = match v {
                    "wall" => Timing::Wall,
                    "off" => Timing::Off,
                    _ => return Err(HarnessError::Config(format!("timing: unknown `{v}`"))),
                }
            }
            "train_file" | "test_file" | "prototype_file" => self.set_file(key, v),
            _ => self.set_synthetic(key, v)?,
        }
        Ok(())
    }

    fn set_file(&mut self, key: &str, v: &str) {
        if !matches!(self.data, DataSource::Files { .. }) {
            self.data = DataSource::Files {
                train: PathBuf::new(),
                test: PathBuf::new(),
                prototypes: PathBuf::new(),
            };
        }
        if let DataSource::Files {
            train,
            test,
            prototypes,
        } = &mut self.data
        {
            let slot = match key {
                "train_file" => train,
                "test_file" => test,
                _ => prototypes,
            };
            *slot = PathBuf::from(v);
        }
    }

    fn set_synthetic(&mut self, key: &str, v: &str) -> Result<()> {
        let DataSource::Synthetic {
            classes,
            per_class,
            test_per_class,
            dim,
            tightness,
            prototype_jitter,
        } = &mut self.data
        else {
            return Err(HarnessError::Config(format!(
                "`{key}` applies to synthetic data only"
            )));
        };
        match key {
            "classes" => *classes = parse(key, v)?,
            "per_class" => *per_class = parse(key, v)?,
            "test_per_class" => *test_per_class = parse(key, v)?,
            "dim" => *dim = parse(key, v)?,
            "tightness" => *tightness = parse(key, v)?,
            "prototype_jitter" => *prototype_jitter = parse(key, v)?,
            _ => return Err(HarnessError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected `key = value`", n + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut config = Self::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(HarnessError::Config(what.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and nonnegative");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(self.ot_temperature > 0.0 && self.ot_temperature.is_finite()) {
            return bad("ot_temperature must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.granularity == Granularity::Batch(0) {
            return bad("OT batch size must be positive");
        }
        if !(self.gce_q > 0.0 && self.gce_q <= 1.0) {
            return bad("gce_q must lie in (0, 1]");
        }
        if self.seeds.is_empty() {
            return bad("seed list is empty");
        }
        self.sinkhorn.validate()?;
        match &self.data {
            DataSource::Synthetic {
                classes,
                per_class,
                test_per_class,
                dim,
                tightness,
                prototype_jitter,
            } => {
                if *classes == 0 || *per_class == 0 || *test_per_class == 0 || *dim == 0 {
                    return bad("synthetic sizes must be positive");
                }
                if !(*tightness > 0.0) {
                    return bad("tightness must be positive");
                }
                if !(*prototype_jitter >= 0.0 && prototype_jitter.is_finite()) {
                    return bad("prototype_jitter must be finite and nonnegative");
                }
                self.noise.validate(*classes)?;
            }
            DataSource::Files {
                train,
                test,
                prototypes,
            } => {
                if [train, test, prototypes]
                    .iter()
                    .any(|p| p.as_os_str().is_empty())
                {
                    return bad("train_file, test_file and prototype_file are all required");
                }
            }
        }
        Ok(())
    }

    /// Seeds and modes are fixed for one job of a sweep.
    pub fn job(&self, mode: Mode, noise_rate: f64) -> Self {
        let mut c = self.clone();
        c.mode = mode;
        c.noise.rate = noise_rate;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn file_then_override() {
        let mut c = ExperimentConfig::default();
        c.apply_text(
            "# comment\nmode = mae_only\nepochs=3\nseeds = 1, 2,3\n\ndim = 8 # trailing\n",
        )
        .unwrap();
        c.set("epochs", "7").unwrap();
        assert_eq!(c.mode, Mode::MaeOnly);
        assert_eq!(c.epochs, 7);
        assert_eq!(c.seeds, vec![1, 2, 3]);
        assert!(matches!(c.data, DataSource::Synthetic { dim: 8, .. }));
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = ExperimentConfig::default();
        assert!(c.set("nonsense", "1").is_err());
        assert!(c.set("mode", "sgd").is_err());
        assert!(c.apply_text("epochs 3").is_err());
        c.set("temperature", "0").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn small_epsilon_switches_to_log_domain() {
        let mut c = ExperimentConfig::default();
        c.set("epsilon", "0.001").unwrap();
        assert!(c.sinkhorn.log_domain);
        c.set("log_domain", "false").unwrap();
        c.set("epsilon", "0.002").unwrap();
        assert!(!c.sinkhorn.log_domain);
    }

    #[test]
    fn granularity_tracks_batch_size() {
        let mut c = ExperimentConfig::default();
        c.set("granularity", "batch").unwrap();
        c.set("batch_size", "8").unwrap();
        assert_eq!(c.granularity, Granularity::Batch(8));
    }
}
