//! Per-channel pipeline stages and the artifacts they exchange.
//!
//! Every channel gets its own directory under the output root:
//!
//! | file                  | written by   |
//! |-----------------------|--------------|
//! | `train_smoothed.csv`  | preprocess   |
//! | `test_smoothed.csv`   | preprocess   |
//! | `normalization.json`  | preprocess   |
//! | `model.json`          | train        |
//! | `train_log.csv`       | train        |
//! | `forecast.csv`        | infer        |
//! | `sweep.csv`           | sweep        |
//! | `detections.csv`      | detect/sweep |
//! | `detections.json`     | detect/sweep |
//!
//! All values are in normalized units.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mcd_telemetry::dataio::{
    self, read_forecast, read_labels, read_series, write_detections, write_forecast, write_series, ForecastRow,
    LabelMap, NormalizationState, LABELS_FILE,
};
use mcd_telemetry::detector::{flag_anomalies_with, outside_band, sweep_nmax_with};
use mcd_telemetry::mcinfer::{coverage, predict_dist};
use mcd_telemetry::metrics::{confusion, mse, scalar_metrics};
use mcd_telemetry::preprocess::smooth;
use mcd_telemetry::trainer::train_with;
use mcd_telemetry::{AnomalyInterval, Checkpoint, ConfusionCounts, RawSeries, SmoothedSeries};
use serde::{Deserialize, Serialize};

use crate::config::{ChannelSelection, RunConfig};

pub const TRAIN_SMOOTHED: &str = "train_smoothed.csv";
pub const TEST_SMOOTHED: &str = "test_smoothed.csv";
pub const NORMALIZATION: &str = "normalization.json";
pub const MODEL: &str = "model.json";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const FORECAST: &str = "forecast.csv";
pub const SWEEP: &str = "sweep.csv";
pub const DETECTIONS: &str = "detections.csv";
pub const DETECTIONS_META: &str = "detections.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Preprocess,
    Train,
    Infer,
    Detect,
    Sweep,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::Train => "train",
            Stage::Infer => "infer",
            Stage::Detect => "detect",
            Stage::Sweep => "sweep",
            Stage::Evaluate => "evaluate",
        }
    }
}

/// How `detections.csv` was produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionMeta {
    pub n_max: usize,
    /// `"config"` or `"sweep"`.
    pub source: String,
    pub window_exceeds_series: bool,
}

/// Everything the report needs about one evaluated channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub points: usize,
    pub mse: f64,
    pub coverage: f64,
    pub counts: ConfusionCounts,
    pub n_max: usize,
    pub n_max_source: String,
}

/// Shared, read-only state for one invocation.
pub struct Pipeline<'a> {
    pub cfg: &'a RunConfig,
    labels: Option<LabelMap>,
}

impl<'a> Pipeline<'a> {
    /// Loads the labels file once when the dataset directory has one.
    pub fn new(cfg: &'a RunConfig) -> Result<Self> {
        let labels = match cfg.dataset_dir.as_deref().map(|d| d.join(LABELS_FILE)) {
            Some(p) if p.is_file() => Some(read_labels(&p)?),
            _ => None,
        };
        Ok(Self { cfg, labels })
    }

    pub fn channel_dir(&self, channel: &str) -> PathBuf {
        self.cfg.output_dir.join(channel)
    }

    fn labels_for(&self, channel: &str) -> Vec<AnomalyInterval> {
        let id = dataio::canonical_channel_id(channel);
        self.labels
            .as_ref()
            .and_then(|m| m.iter().find(|(k, _)| dataio::canonical_channel_id(k) == id))
            .map(|(_, v)| v.clone())
            .unwrap_or_default()
    }

    pub fn run_stage(&self, stage: Stage, channel: &str) -> Result<()> {
        match stage {
            Stage::Preprocess => self.preprocess(channel),
            Stage::Train => self.train(channel),
            Stage::Infer => self.infer(channel),
            Stage::Detect => self.detect(channel, self.cfg.detector.n_max, "config"),
            Stage::Sweep => self.sweep(channel),
            Stage::Evaluate => self.evaluate(channel).map(|_| ()),
        }
    }

    pub fn preprocess(&self, channel: &str) -> Result<()> {
        let data = self.cfg.dataset_dir()?;
        let rec = dataio::load_channel_with_labels::<f64, String>(
            data,
            channel,
            self.labels.as_ref().unwrap_or(&LabelMap::new()),
            &[],
        )?;
        let (train, test, state) = dataio::normalize(&rec.train, &rec.test)?;
        let train = smooth(&RawSeries::new(channel, train)?, &self.cfg.smoothing)?;
        let test = if self.cfg.smooth_test {
            smooth(&RawSeries::new(channel, test)?, &self.cfg.smoothing)?.into_values()
        } else {
            test
        };
        let dir = self.channel_dir(channel);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write_series(&dir.join(TRAIN_SMOOTHED), train.values())?;
        write_series(&dir.join(TEST_SMOOTHED), &test)?;
        write_json(&dir.join(NORMALIZATION), &state)
    }

    pub fn train(&self, channel: &str) -> Result<()> {
        let dir = self.channel_dir(channel);
        let values: Vec<f64> = read_series(&require(&dir, TRAIN_SMOOTHED, "smoothed training data")?)?;
        let state: NormalizationState = read_json(&require(&dir, NORMALIZATION, "normalization state")?)?;
        let series = SmoothedSeries::from_values(channel, values)?;
        let tc = self.cfg.train_config();
        let mut log = String::from("epoch,data_term,reg_term,total\n");
        let (params, _) = train_with(&series, &self.cfg.architecture, &tc, |epoch, l| {
            log::debug!("{channel} epoch {epoch}: data {:.6e} reg {:.6e}", l.data_term, l.reg_term);
            writeln!(log, "{epoch},{},{},{}", l.data_term, l.reg_term, l.total).unwrap();
        })?;
        fs::write(dir.join(TRAIN_LOG), log).with_context(|| format!("writing {TRAIN_LOG} for {channel}"))?;
        Checkpoint {
            params,
            lookback: tc.lookback,
            train_config: Some(tc),
            normalization: Some(state),
        }
        .save(&dir.join(MODEL))?;
        Ok(())
    }

    pub fn infer(&self, channel: &str) -> Result<()> {
        let dir = self.channel_dir(channel);
        let ck = Checkpoint::<f64>::load(&require(&dir, MODEL, "trained model")?)?;
        let train: Vec<f64> = read_series(&require(&dir, TRAIN_SMOOTHED, "smoothed training data")?)?;
        let test: Vec<f64> = read_series(&require(&dir, TEST_SMOOTHED, "smoothed test data")?)?;
        let t = ck.lookback;
        if train.len() < t {
            bail!("training split has {} points, fewer than lookback {t}", train.len());
        }
        // The last `t` training points give the first test index its context.
        let mut joined = train[train.len() - t..].to_vec();
        joined.extend_from_slice(&test);
        let series = SmoothedSeries::from_values(channel, joined)?;
        let dist = predict_dist(
            &series,
            &ck.params,
            t,
            self.cfg.mc_passes,
            self.cfg.p_drop,
            self.cfg.z_mult,
            self.cfg.seed,
        )?;
        let rows = dataio::forecast_rows(&dist, &series.values()[t..], t)?;
        write_forecast(&dir.join(FORECAST), &rows)?;
        Ok(())
    }

    fn outside(&self, rows: &[ForecastRow]) -> Result<mcd_telemetry::OutsideFlags> {
        let col = |f: fn(&ForecastRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
        Ok(outside_band(&col(|r| r.actual), &col(|r| r.lower), &col(|r| r.upper))?)
    }

    pub fn detect(&self, channel: &str, n_max: usize, source: &str) -> Result<()> {
        let dir = self.channel_dir(channel);
        let rows = read_forecast(&require(&dir, FORECAST, "forecast")?)?;
        let flagged = flag_anomalies_with(&self.outside(&rows)?, n_max, self.cfg.detector.rule)?;
        write_detections(&dir.join(DETECTIONS), channel, n_max, &flagged.intervals)?;
        write_json(
            &dir.join(DETECTIONS_META),
            &DetectionMeta {
                n_max,
                source: source.to_string(),
                window_exceeds_series: flagged.window_exceeds_series,
            },
        )
    }

    pub fn sweep(&self, channel: &str) -> Result<()> {
        let dir = self.channel_dir(channel);
        let rows = read_forecast(&require(&dir, FORECAST, "forecast")?)?;
        let labels = self.labels_for(channel);
        let result = sweep_nmax_with(
            &self.outside(&rows)?,
            &labels,
            &self.cfg.detector.candidates,
            self.cfg.max_delay,
            self.cfg.detector.rule,
        )?;
        let mut out = String::from("n_max,rho,tp,fp,fn,tn,precision,recall,accuracy,f1\n");
        for ((n, rho), c) in result.candidates.iter().zip(&result.rho).zip(&result.counts) {
            let s = scalar_metrics(c);
            writeln!(
                out,
                "{n},{rho},{},{},{},{},{},{},{},{}",
                c.tp, c.fp, c.fn_, c.tn, s.precision, s.recall, s.accuracy, s.f1
            )
            .unwrap();
        }
        fs::write(dir.join(SWEEP), out).with_context(|| format!("writing {SWEEP} for {channel}"))?;
        self.detect(channel, result.n_opt, "sweep")
    }

    pub fn evaluate(&self, channel: &str) -> Result<Evaluation> {
        let dir = self.channel_dir(channel);
        let rows = read_forecast(&require(&dir, FORECAST, "forecast")?)?;
        let dets = dataio::read_detections(&require(&dir, DETECTIONS, "detections")?)?;
        let meta: DetectionMeta = read_json(&require(&dir, DETECTIONS_META, "detection metadata")?)?;
        let labels = self.labels_for(channel);
        let actual: Vec<f64> = rows.iter().map(|r| r.actual).collect();
        let mean: Vec<f64> = rows.iter().map(|r| r.mean).collect();
        let dist = mcd_telemetry::ForecastDistribution {
            timestamps: rows.iter().map(|r| r.index).collect(),
            samples: Vec::new(),
            mean: mean.clone(),
            variance: rows.iter().map(|r| r.variance).collect(),
            lower: rows.iter().map(|r| r.lower).collect(),
            upper: rows.iter().map(|r| r.upper).collect(),
            z_mult: self.cfg.z_mult,
        };
        let intervals: Vec<AnomalyInterval> = dets.iter().map(|d| d.interval()).collect();
        Ok(Evaluation {
            points: rows.len(),
            mse: mse(&actual, &mean)?,
            coverage: coverage(&dist, &actual)?,
            counts: confusion(&intervals, &labels, self.cfg.max_delay, rows.len())?,
            n_max: meta.n_max,
            n_max_source: meta.source,
        })
    }
}

/// Channels named by the configuration, sorted and de-duplicated. `all`
/// lists the dataset directory, or the output directory when no dataset is
/// configured.
pub fn resolve_channels(cfg: &RunConfig) -> Result<Vec<String>> {
    let mut ids = match &cfg.channels {
        ChannelSelection::List(l) => l.clone(),
        ChannelSelection::All => match cfg.dataset_dir.as_deref() {
            Some(_) => dataio::list_channels(cfg.dataset_dir()?)?,
            None => channel_dirs(&cfg.output_dir)?,
        },
    };
    ids.sort();
    ids.dedup();
    Ok(ids)
}

/// Sub-directories of a run directory that hold channel artifacts.
pub fn channel_dirs(root: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    let entries = fs::read_dir(root).with_context(|| format!("listing {}", root.display()))?;
    for entry in entries {
        let entry = entry?;
        if entry.file_type()?.is_dir() && entry.file_name() != crate::report::PLOT_DIR {
            if let Some(name) = entry.file_name().to_str() {
                ids.push(name.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn require(dir: &Path, file: &str, what: &str) -> Result<PathBuf> {
    let p = dir.join(file);
    if p.is_file() {
        Ok(p)
    } else {
        Err(anyhow!("missing {what}: {} not found", p.display()))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
