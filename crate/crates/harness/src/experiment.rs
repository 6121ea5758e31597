//! Experiment directories: metrics in every report format plus a manifest
//! from which the metrics can be regenerated.

use std::fs;
use std::path::{Path, PathBuf};

use nlprompt_core::rng::RNG_ALGORITHM;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Mode, Timing};
use crate::error::{HarnessError, Result};
use crate::report::{self, ReportFormat, CSV_COLUMNS};
use crate::trainer::{run_sweep, MetricsRecord};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub rng_algorithm: String,
    pub command: String,
    pub argv: Vec<String>,
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
    pub noise_rates: Vec<f64>,
    pub config: Option<ExperimentConfig>,
    /// Command-specific parameters for commands without an experiment config.
    #[serde(default)]
    pub params: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, argv: &[String]) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            rng_algorithm: RNG_ALGORITHM.to_string(),
            command: command.to_string(),
            argv: argv.to_vec(),
            seeds: Vec::new(),
            modes: Vec::new(),
            noise_rates: Vec::new(),
            config: None,
            params: serde_json::Value::Null,
        }
    }

    /// `manifest.json` for training runs, `<command>.manifest.json` otherwise.
    pub fn file_name(&self) -> String {
        if self.command == "train" {
            MANIFEST_FILE.to_string()
        } else {
            format!("{}.{MANIFEST_FILE}", self.command)
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let path = dir.join(self.file_name());
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(HarnessError::Config(format!(
                "manifest schema {} is not supported",
                m.schema_version
            )));
        }
        Ok(m)
    }
}

/// Runs the sweep, writes every report format and the manifest into
/// `config.output_dir`.
pub fn run_experiment(
    config: &ExperimentConfig,
    modes: &[Mode],
    noise_rates: &[f64],
    argv: &[String],
) -> Result<Vec<MetricsRecord>> {
    config.validate()?;
    if modes.is_empty() || noise_rates.is_empty() {
        return Err(HarnessError::Config(
            "need at least one mode and one noise rate".into(),
        ));
    }
    let records = run_sweep(config, modes, noise_rates)?;
    let dir = &config.output_dir;
    let mut manifest = Manifest::new("train", argv);
    manifest.seeds = config.seeds.clone();
    manifest.modes = modes.to_vec();
    manifest.noise_rates = noise_rates.to_vec();
    manifest.config = Some(config.clone());
    manifest.write(dir)?;
    if !records.is_empty() {
        for format in [
            ReportFormat::Csv,
            ReportFormat::JsonLines,
            ReportFormat::Svg,
        ] {
            report::emit_report(&records, format, dir)?;
        }
    }
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayReport {
    pub output_dir: PathBuf,
    /// Original and replayed CSV bytes are identical.
    pub identical: bool,
    /// Identical after blanking the wall-clock columns.
    pub identical_without_timing: bool,
}

fn mask_timing(csv: &str) -> String {
    let timing: Vec<usize> = ["ot_seconds", "step_seconds"]
        .iter()
        .filter_map(|c| CSV_COLUMNS.iter().position(|x| x == c))
        .collect();
    csv.lines()
        .map(|l| {
            l.split(',')
                .enumerate()
                .map(|(i, f)| if timing.contains(&i) { "" } else { f })
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Re-runs the experiment recorded in `manifest_path` into `out_dir` and
/// compares the CSV with the one next to the manifest.
pub fn replay(manifest_path: &Path, out_dir: &Path) -> Result<ReplayReport> {
    let manifest = Manifest::read(manifest_path)?;
    let Some(mut config) = manifest.config.clone() else {
        return Err(HarnessError::Config(format!(
            "`{}` manifests carry no experiment to replay",
            manifest.command
        )));
    };
    config.output_dir = out_dir.to_path_buf();
    run_experiment(
        &config,
        &manifest.modes,
        &manifest.noise_rates,
        &manifest.argv,
    )?;
    let original_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let read = |dir: &Path| -> Result<String> {
        let p = dir.join(ReportFormat::Csv.file_name());
        fs::read_to_string(&p).map_err(|e| HarnessError::io(&p, e))
    };
    let (a, b) = (read(original_dir)?, read(out_dir)?);
    let identical = a == b;
    let identical_without_timing = mask_timing(&a) == mask_timing(&b);
    let ok = match config.timing {
        Timing::Off => identical,
        Timing::Wall => identical_without_timing,
    };
    if !ok {
        return Err(HarnessError::ReplayMismatch(out_dir.display().to_string()));
    }
    Ok(ReplayReport {
        output_dir: out_dir.to_path_buf(),
        identical,
        identical_without_timing,
    })
}
