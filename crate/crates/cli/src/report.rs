//! Run reports, the error manifest and plot-ready tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mcd_telemetry::dataio::read_forecast;
use mcd_telemetry::metrics::scalar_metrics;
use mcd_telemetry::ConfusionCounts;
use serde::Serialize;

use crate::stages::{channel_dirs, require, write_json, Evaluation, Stage, FORECAST, SWEEP};

pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";
pub const ERRORS: &str = "errors.txt";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const PLOT_DIR: &str = "plot";

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Done(Option<Evaluation>),
    Excluded,
    Failed { stage: Stage, message: String },
}

#[derive(Debug, Clone)]
pub struct ChannelOutcome {
    pub channel: String,
    pub outcome: Outcome,
}

impl ChannelOutcome {
    pub fn failed(&self) -> bool {
        matches!(self.outcome, Outcome::Failed { .. })
    }
}

/// One line per failed channel, `channel<TAB>stage<TAB>message`.
pub fn write_error_manifest(dir: &Path, outcomes: &[ChannelOutcome]) -> Result<()> {
    let mut out = String::new();
    for o in outcomes {
        if let Outcome::Failed { stage, message } = &o.outcome {
            let one_line = message.replace('\n', " ");
            writeln!(out, "{}\t{}\t{}", o.channel, stage.name(), one_line).unwrap();
        }
    }
    let path = dir.join(ERRORS);
    fs::write(&path, out).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Serialize)]
struct Row<'a> {
    channel: &'a str,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    counts: Option<ConfusionCounts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    zero_division: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_opt: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Aggregate {
    channels: usize,
    points: usize,
    mse: f64,
    coverage: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    counts: Option<ConfusionCounts>,
    precision: f64,
    recall: f64,
    accuracy: f64,
    f1: f64,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    channels: Vec<Row<'a>>,
    /// Counts summed over channels, then scored; point-weighted mse and coverage.
    pooled: Option<Aggregate>,
    /// Unweighted average of per-channel values.
    mean: Option<Aggregate>,
}

fn rows(outcomes: &[ChannelOutcome]) -> Vec<Row<'_>> {
    outcomes
        .iter()
        .map(|o| {
            let blank = Row {
                channel: &o.channel,
                status: "ok",
                error: None,
                points: None,
                mse: None,
                coverage: None,
                counts: None,
                precision: None,
                recall: None,
                accuracy: None,
                f1: None,
                zero_division: None,
                n_opt: None,
            };
            match &o.outcome {
                Outcome::Excluded => Row {
                    status: "excluded",
                    ..blank
                },
                Outcome::Failed { message, .. } => Row {
                    status: "failed",
                    error: Some(message),
                    ..blank
                },
                Outcome::Done(None) => blank,
                Outcome::Done(Some(e)) => {
                    let s = scalar_metrics(&e.counts);
                    Row {
                        points: Some(e.points),
                        mse: Some(e.mse),
                        coverage: Some(e.coverage),
                        counts: Some(e.counts),
                        precision: Some(s.precision),
                        recall: Some(s.recall),
                        accuracy: Some(s.accuracy),
                        f1: Some(s.f1),
                        zero_division: Some(s.zero_division),
                        n_opt: Some(e.n_max),
                        ..blank
                    }
                }
            }
        })
        .collect()
}

fn aggregates(outcomes: &[ChannelOutcome]) -> (Option<Aggregate>, Option<Aggregate>) {
    let evals: Vec<&Evaluation> = outcomes
        .iter()
        .filter_map(|o| match &o.outcome {
            Outcome::Done(Some(e)) => Some(e),
            _ => None,
        })
        .collect();
    if evals.is_empty() {
        return (None, None);
    }
    let k = evals.len() as f64;
    let points: usize = evals.iter().map(|e| e.points).sum();
    let total = evals.iter().fold(ConfusionCounts::default(), |acc, e| acc + e.counts);
    let s = scalar_metrics(&total);
    let weighted = |f: fn(&Evaluation) -> f64| evals.iter().map(|e| f(e) * e.points as f64).sum::<f64>() / points as f64;
    let pooled = Aggregate {
        channels: evals.len(),
        points,
        mse: weighted(|e| e.mse),
        coverage: weighted(|e| e.coverage),
        counts: Some(total),
        precision: s.precision,
        recall: s.recall,
        accuracy: s.accuracy,
        f1: s.f1,
    };
    let per: Vec<_> = evals.iter().map(|e| scalar_metrics(&e.counts)).collect();
    let avg = |f: &dyn Fn(usize) -> f64| (0..evals.len()).map(f).sum::<f64>() / k;
    let mean = Aggregate {
        channels: evals.len(),
        points,
        mse: avg(&|i| evals[i].mse),
        coverage: avg(&|i| evals[i].coverage),
        counts: None,
        precision: avg(&|i| per[i].precision),
        recall: avg(&|i| per[i].recall),
        accuracy: avg(&|i| per[i].accuracy),
        f1: avg(&|i| per[i].f1),
    };
    (Some(pooled), Some(mean))
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn fixed(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

fn render_text(report: &Report) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<12} {:<9} {:>7} {:>10} {:>9} {:>4} {:>4} {:>4} {:>5} {:>9} {:>9} {:>9} {:>9} {:>5}",
        "channel", "status", "points", "mse", "coverage", "tp", "fp", "fn", "tn", "precision", "recall", "accuracy",
        "f1", "n_opt"
    )
    .unwrap();
    let mut line = |name: &str, status: &str, points: Option<usize>, a: &dyn Fn() -> [Option<f64>; 6], c: Option<ConfusionCounts>, n: Option<usize>| {
        let [mse, cov, p, r, acc, f1] = a();
        writeln!(
            out,
            "{:<12} {:<9} {:>7} {:>10} {:>9} {:>4} {:>4} {:>4} {:>5} {:>9} {:>9} {:>9} {:>9} {:>5}",
            name,
            status,
            opt(points),
            fixed(mse),
            fixed(cov),
            opt(c.map(|c| c.tp)),
            opt(c.map(|c| c.fp)),
            opt(c.map(|c| c.fn_)),
            opt(c.map(|c| c.tn)),
            fixed(p),
            fixed(r),
            fixed(acc),
            fixed(f1),
            opt(n)
        )
        .unwrap();
    };
    for r in &report.channels {
        line(
            r.channel,
            r.status,
            r.points,
            &|| [r.mse, r.coverage, r.precision, r.recall, r.accuracy, r.f1],
            r.counts,
            r.n_opt,
        );
    }
    for (name, agg) in [("pooled", &report.pooled), ("mean", &report.mean)] {
        if let Some(a) = agg {
            line(
                name,
                "",
                Some(a.points),
                &|| [Some(a.mse), Some(a.coverage), Some(a.precision), Some(a.recall), Some(a.accuracy), Some(a.f1)],
                a.counts,
                None,
            );
        }
    }
    let failed: Vec<&Row> = report.channels.iter().filter(|r| r.error.is_some()).collect();
    if !failed.is_empty() {
        writeln!(out, "\nfailures:").unwrap();
        for r in failed {
            writeln!(out, "  {}: {}", r.channel, r.error.unwrap().replace('\n', " ")).unwrap();
        }
    }
    out
}

/// Writes `report.txt` and `report.json`. Neither contains timestamps or
/// host details, so equal inputs give byte-identical files.
pub fn write_report(dir: &Path, outcomes: &[ChannelOutcome]) -> Result<()> {
    let (pooled, mean) = aggregates(outcomes);
    let report = Report {
        channels: rows(outcomes),
        pooled,
        mean,
    };
    let path = dir.join(REPORT_TXT);
    fs::write(&path, render_text(&report)).with_context(|| format!("writing {}", path.display()))?;
    write_json(&dir.join(REPORT_JSON), &report)
}

/// Writes `plot/<channel>_bounds.csv` and, when a sweep exists,
/// `plot/<channel>_sweep.csv` for every channel directory of a run.
pub fn plotdata(run_dir: &Path) -> Result<Vec<ChannelOutcome>> {
    if !run_dir.is_dir() {
        bail!("run directory {} does not exist", run_dir.display());
    }
    let channels = channel_dirs(run_dir)?;
    if channels.is_empty() {
        bail!("run directory {} has no channel directories", run_dir.display());
    }
    let plot = run_dir.join(PLOT_DIR);
    fs::create_dir_all(&plot).with_context(|| format!("creating {}", plot.display()))?;
    Ok(channels
        .into_iter()
        .map(|ch| {
            let outcome = match plot_channel(run_dir, &plot, &ch) {
                Ok(()) => Outcome::Done(None),
                Err(e) => Outcome::Failed {
                    stage: Stage::Infer,
                    message: format!("{e:#}"),
                },
            };
            ChannelOutcome { channel: ch, outcome }
        })
        .collect())
}

fn plot_channel(run_dir: &Path, plot: &Path, channel: &str) -> Result<()> {
    let dir = run_dir.join(channel);
    let rows = read_forecast(&require(&dir, FORECAST, "forecast")?)?;
    let mut out = String::from("index,actual,predicted,lower,upper\n");
    for r in &rows {
        writeln!(out, "{},{},{},{},{}", r.index, r.actual, r.mean, r.lower, r.upper).unwrap();
    }
    fs::write(plot.join(format!("{channel}_bounds.csv")), out)?;
    let sweep = dir.join(SWEEP);
    if sweep.is_file() {
        fs::copy(&sweep, plot.join(format!("{channel}_sweep.csv")))?;
    }
    Ok(())
}
