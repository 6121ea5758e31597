//! CSV, JSON-lines and SVG output. Floats are written with six significant
//! digits so a CSV parsed and re-emitted is byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::{json, Value};

use crate::config::Mode;
use crate::error::{HarnessError, Result};
use crate::trainer::MetricsRecord;

pub const CSV_COLUMNS: [&str; 10] = [
    "epoch",
    "mode",
    "noise_rate",
    "seed",
    "train_loss",
    "test_acc",
    "purif_acc",
    "purif_f1",
    "ot_seconds",
    "step_seconds",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    JsonLines,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json-lines" | "jsonl" => Ok(ReportFormat::JsonLines),
            "svg" | "svg-plot" => Ok(ReportFormat::Svg),
            _ => Err(HarnessError::Config(format!("unknown report format `{s}`"))),
        }
    }
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Csv => "metrics.csv",
            ReportFormat::JsonLines => "metrics.jsonl",
            ReportFormat::Svg => "accuracy.svg",
        }
    }
}

/// Six significant digits; plain notation for moderate magnitudes, otherwise
/// scientific. Non-finite values are written as `nan`, `inf`, `-inf`.
pub fn fmt_sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-4..6).contains(&exp) {
        return sci;
    }
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let sign = if x < 0.0 { "-" } else { "" };
    let point = exp + 1;
    if point <= 0 {
        format!("{sign}0.{}{digits}", "0".repeat((-point) as usize))
    } else if point as usize >= digits.len() {
        format!("{sign}{digits}")
    } else {
        let (int, frac) = digits.split_at(point as usize);
        format!("{sign}{int}.{frac}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig6).unwrap_or_default()
}

pub fn csv_string(records: &[MetricsRecord]) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        let fields = [
            r.epoch.to_string(),
            r.mode.to_string(),
            fmt_sig6(r.noise_rate),
            r.seed.to_string(),
            fmt_sig6(r.train_loss),
            fmt_sig6(r.test_acc),
            opt(r.purif_acc),
            opt(r.purif_f1),
            fmt_sig6(r.ot_seconds),
            fmt_sig6(r.step_seconds),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// One parsed CSV row. Fields not present in the CSV stay at their defaults.
pub fn parse_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Config("empty CSV".into()))?;
    if header != CSV_COLUMNS.join(",") {
        return Err(HarnessError::Config(format!(
            "unexpected CSV header `{header}`"
        )));
    }
    let num = |s: &str, col: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| HarnessError::Config(format!("{col}: bad number `{s}`")))
    };
    let maybe = |s: &str, col: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s, col).map(Some)
        }
    };
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != CSV_COLUMNS.len() {
                return Err(HarnessError::Config(format!(
                    "row has {} fields: `{line}`",
                    f.len()
                )));
            }
            Ok(MetricsRecord {
                epoch: f[0]
                    .parse()
                    .map_err(|_| HarnessError::Config(format!("epoch: `{}`", f[0])))?,
                mode: f[1].parse()?,
                noise_rate: num(f[2], "noise_rate")?,
                seed: f[3]
                    .parse()
                    .map_err(|_| HarnessError::Config(format!("seed: `{}`", f[3])))?,
                train_loss: num(f[4], "train_loss")?,
                train_acc: f64::NAN,
                test_acc: num(f[5], "test_acc")?,
                purif_acc: maybe(f[6], "purif_acc")?,
                purif_f1: maybe(f[7], "purif_f1")?,
                clean_fraction: None,
                histogram: None,
                ot_residual: None,
                warnings: Vec::new(),
                ot_seconds: num(f[8], "ot_seconds")?,
                step_seconds: num(f[9], "step_seconds")?,
            })
        })
        .collect()
}

fn num_value(x: f64) -> Value {
    fmt_sig6(x)
        .parse::<f64>()
        .ok()
        .and_then(serde_json::Number::from_f64)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

pub fn jsonl_string(records: &[MetricsRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let v = json!({
            "epoch": r.epoch,
            "mode": r.mode.as_str(),
            "noise_rate": num_value(r.noise_rate),
            "seed": r.seed,
            "train_loss": num_value(r.train_loss),
            "train_acc": num_value(r.train_acc),
            "test_acc": num_value(r.test_acc),
            "purif_acc": r.purif_acc.map(num_value),
            "purif_f1": r.purif_f1.map(num_value),
            "clean_fraction": r.clean_fraction.map(num_value),
            "pseudo_label_histogram": r.histogram,
            "ot_residual": r.ot_residual.map(num_value),
            "warnings": r.warnings,
            "ot_seconds": num_value(r.ot_seconds),
            "step_seconds": num_value(r.step_seconds),
        });
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn mean_by<K: Ord + Clone>(items: impl Iterator<Item = (K, f64)>) -> BTreeMap<K, f64> {
    let mut acc: BTreeMap<K, (f64, usize)> = BTreeMap::new();
    for (k, v) in items {
        let e = acc.entry(k).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

/// Noise rates as sortable keys.
fn rate_key(r: f64) -> i64 {
    (r * 1e6).round() as i64
}

fn epoch_series(records: &[MetricsRecord]) -> Vec<Series> {
    let mut groups: BTreeMap<(i64, Mode), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((rate_key(r.noise_rate), r.mode))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((_, mode), rs)| {
            let rate = rs[0].noise_rate;
            let means = mean_by(rs.iter().map(|r| (r.epoch, r.test_acc)));
            Series {
                label: format!("{mode} noise={}", fmt_sig6(rate)),
                points: means.into_iter().map(|(e, a)| (e as f64, a)).collect(),
            }
        })
        .collect()
}

fn noise_series(records: &[MetricsRecord]) -> Vec<Series> {
    let mut last: BTreeMap<(Mode, i64, u64), &MetricsRecord> = BTreeMap::new();
    for r in records {
        let slot = last
            .entry((r.mode, rate_key(r.noise_rate), r.seed))
            .or_insert(r);
        if r.epoch >= slot.epoch {
            *slot = r;
        }
    }
    let mut by_mode: BTreeMap<Mode, Vec<(i64, f64)>> = BTreeMap::new();
    for ((mode, rate, _), r) in last {
        by_mode.entry(mode).or_default().push((rate, r.test_acc));
    }
    by_mode
        .into_iter()
        .map(|(mode, pts)| Series {
            label: mode.to_string(),
            points: mean_by(pts.into_iter())
                .into_iter()
                .map(|(k, v)| (k as f64 / 1e6, v))
                .collect(),
        })
        .collect()
}

fn plot(out: &mut String, series: &[Series], title: &str, x_label: &str, y_offset: f64) {
    let (w, h, left, top) = (560.0, 300.0, 60.0, y_offset + 30.0);
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (x_min, x_max) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
        (a.min(x), b.max(x))
    });
    let span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let sx = |x: f64| left + (x - x_min) / span * w;
    let sy = |y: f64| top + (1.0 - y.clamp(0.0, 1.0)) * h;
    let _ = writeln!(
        out,
        r#"<g class="plot"><text x="{}" y="{}" font-size="14">{title}</text>"#,
        left,
        top - 10.0
    );
    let _ = writeln!(
        out,
        r##"<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="#444"/>"##
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#,
            left - 4.0,
            sy(tick) + 3.0,
            fmt_sig6(tick)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="10">{x_label}: {} to {}</text>"#,
        left,
        top + h + 16.0,
        fmt_sig6(x_min),
        fmt_sig6(x_max)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{},{}", fmt_sig6(sx(x)), fmt_sig6(sy(y))))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="series" data-label="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            s.label,
            pts.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="10" fill="{color}">{}</text>"#,
            left + w + 8.0,
            top + 12.0 * (k as f64 + 1.0),
            s.label
        );
    }
    out.push_str("</g>\n");
}

/// Test accuracy against epoch, plus accuracy against noise rate when the
/// records span more than one rate.
pub fn svg_string(records: &[MetricsRecord]) -> String {
    let rates: std::collections::BTreeSet<i64> =
        records.iter().map(|r| rate_key(r.noise_rate)).collect();
    let sweep = rates.len() > 1;
    let height = if sweep { 760 } else { 380 };
    let mut out =
        format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"820\" height=\"{height}\">\n");
    plot(
        &mut out,
        &epoch_series(records),
        "test accuracy vs epoch",
        "epoch",
        0.0,
    );
    if sweep {
        plot(
            &mut out,
            &noise_series(records),
            "final test accuracy vs noise rate",
            "noise rate",
            380.0,
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Writes the report file for `format` into `dir` and returns its path.
pub fn emit_report(records: &[MetricsRecord], format: ReportFormat, dir: &Path) -> Result<PathBuf> {
    if records.is_empty() {
        return Err(HarnessError::Config("no records to report".into()));
    }
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let text = match format {
        ReportFormat::Csv => csv_string(records),
        ReportFormat::JsonLines => jsonl_string(records),
        ReportFormat::Svg => svg_string(records),
    };
    let path = dir.join(format.file_name());
    fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

/// Reads records back from `metrics.jsonl` (full fields) or `metrics.csv`.
pub fn load_records(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    if path.extension().is_some_and(|e| e == "csv") {
        return parse_csv(&text);
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Value = serde_json::from_str(l)?;
            let f = |k: &str| v.get(k).and_then(Value::as_f64);
            let missing = |k: &str| HarnessError::Config(format!("record lacks `{k}`"));
            Ok(MetricsRecord {
                epoch: v
                    .get("epoch")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| missing("epoch"))? as usize,
                mode: v
                    .get("mode")
                    .and_then(Value::as_str)
                    .ok_or_else(|| missing("mode"))?
                    .parse()?,
                noise_rate: f("noise_rate").ok_or_else(|| missing("noise_rate"))?,
                seed: v
                    .get("seed")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| missing("seed"))?,
                train_loss: f("train_loss").unwrap_or(f64::NAN),
                train_acc: f("train_acc").unwrap_or(f64::NAN),
                test_acc: f("test_acc").ok_or_else(|| missing("test_acc"))?,
                purif_acc: f("purif_acc"),
                purif_f1: f("purif_f1"),
                clean_fraction: f("clean_fraction"),
                histogram: serde_json::from_value(v["pseudo_label_histogram"].clone())
                    .unwrap_or(None),
                ot_residual: f("ot_residual"),
                warnings: serde_json::from_value(v["warnings"].clone()).unwrap_or_default(),
                ot_seconds: f("ot_seconds").unwrap_or(0.0),
                step_seconds: f("step_seconds").unwrap_or(0.0),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize, mode: Mode, rate: f64, acc: f64) -> MetricsRecord {
        MetricsRecord {
            epoch,
            mode,
            noise_rate: rate,
            seed: 7,
            train_loss: 0.123456789,
            train_acc: 0.5,
            test_acc: acc,
            purif_acc: Some(0.9),
            purif_f1: None,
            clean_fraction: None,
            histogram: Some(vec![1, 2]),
            ot_residual: None,
            warnings: vec![],
            ot_seconds: 1.5e-5,
            step_seconds: 0.0,
        }
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig6(0.5), "0.500000");
        assert_eq!(fmt_sig6(1.0), "1.00000");
        assert_eq!(fmt_sig6(0.123456789), "0.123457");
        assert_eq!(fmt_sig6(123456.0), "123456");
        assert_eq!(fmt_sig6(1234567.0), "1.23457e6");
        assert_eq!(fmt_sig6(12345.67), "12345.7");
        assert_eq!(fmt_sig6(-0.00012345678), "-0.000123457");
        assert_eq!(fmt_sig6(1.5e-5), "1.50000e-5");
        assert_eq!(fmt_sig6(9.9999996), "10.0000");
        assert_eq!(fmt_sig6(0.0), "0");
    }

    #[test]
    fn one_record_one_row() {
        let csv = csv_string(&[record(1, Mode::Nlprompt, 0.25, 0.75)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert_eq!(
            lines[1],
            "1,nlprompt,0.250000,7,0.123457,0.750000,0.900000,,1.50000e-5,0"
        );
    }

    #[test]
    fn csv_reemit_is_identical() {
        let csv = csv_string(&[
            record(1, Mode::CeOnly, 0.5, 1.0 / 3.0),
            record(2, Mode::Gce, 0.0, 0.0),
        ]);
        assert_eq!(csv_string(&parse_csv(&csv).unwrap()), csv);
    }

    #[test]
    fn jsonl_one_line_per_record() {
        let recs = [
            record(1, Mode::MaeOnly, 0.0, 0.5),
            record(2, Mode::MaeOnly, 0.0, 0.6),
        ];
        let text = jsonl_string(&recs);
        assert_eq!(text.lines().count(), 2);
        let v: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["train_loss"], json!(0.123457));
        assert_eq!(v["purif_f1"], Value::Null);
    }

    #[test]
    fn sweep_svg_has_a_series_per_noise_level() {
        let mut recs = Vec::new();
        for rate in [0.0, 0.25, 0.5] {
            for e in 1..=3 {
                recs.push(record(e, Mode::Nlprompt, rate, 0.9 - rate));
            }
        }
        let svg = svg_string(&recs);
        assert_eq!(svg.matches(r#"data-label="nlprompt noise="#).count(), 3);
        assert_eq!(svg.matches(r#"data-label="nlprompt""#).count(), 1);
    }
}
