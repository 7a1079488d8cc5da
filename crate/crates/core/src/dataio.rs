//! Channel files, labels and normalization.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! <dir>/<channel>_train.csv   one row per time step, telemetry in column 0
//! <dir>/<channel>_test.csv
//! <dir>/labels.json           {"<channel>": [[start, end], ...], ...}
//! ```
//!
//! Extra columns (the command channels of the public dataset) are ignored.
//! Label indices refer to rows of the test file and are inclusive.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::AnomalyInterval;
use crate::error::{Error, Result};
use crate::mcinfer::ForecastDistribution;
use crate::scalar::Scalar;

/// Channels with no usable univariate signal (e.g. constant in both splits).
pub const EXCLUDED_CHANNELS: [&str; 20] = [
    "M-6", "E-3", "A-1", "D-1", "D-3", "D-4", "G-1", "D-5", "D-11", "G-6", "R-1", "A-6", "F-3", "M-2",
    "P-10", "M-3", "D-16", "P-15", "P-11", "P-14",
];

pub const LABELS_FILE: &str = "labels.json";

/// `"p_1"`, `"P1"` and `"P-1"` all name the same channel.
pub fn canonical_channel_id(id: &str) -> String {
    id.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_uppercase())
        .collect()
}

pub fn is_excluded<T: AsRef<str>>(channel_id: &str, exclusions: &[T]) -> bool {
    let id = canonical_channel_id(channel_id);
    exclusions.iter().any(|e| canonical_channel_id(e.as_ref()) == id)
}

pub fn default_exclusions() -> Vec<String> {
    EXCLUDED_CHANNELS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRecord<S> {
    pub channel_id: String,
    pub train: Vec<S>,
    pub test: Vec<S>,
    pub labels: Vec<AnomalyInterval>,
    pub excluded: bool,
}

pub type LabelMap = BTreeMap<String, Vec<AnomalyInterval>>;

pub fn train_path(dir: &Path, channel_id: &str) -> PathBuf {
    dir.join(format!("{channel_id}_train.csv"))
}

pub fn test_path(dir: &Path, channel_id: &str) -> PathBuf {
    dir.join(format!("{channel_id}_test.csv"))
}

/// Reads column 0 of a comma-separated numeric file. Blank lines and lines
/// starting with `#` are skipped; rows are numbered from 1 in errors.
pub fn read_series<S: Scalar>(path: &Path) -> Result<Vec<S>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = record.position().map_or(values.len() + 1, |p| p.line() as usize);
        let field = record.get(0).unwrap_or("");
        let v: f64 = field.parse().map_err(|_| Error::Ingest {
            path: path.to_path_buf(),
            row,
            reason: format!("telemetry value {field:?} is not numeric"),
        })?;
        if !v.is_finite() {
            return Err(Error::Ingest {
                path: path.to_path_buf(),
                row,
                reason: "telemetry value is not finite".into(),
            });
        }
        values.push(S::of(v));
    }
    if values.is_empty() {
        return Err(Error::Ingest {
            path: path.to_path_buf(),
            row: 0,
            reason: "file contains no rows".into(),
        });
    }
    Ok(values)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Ingest {
            path: path.to_path_buf(),
            row,
            reason: format!("{other:?}"),
        },
    }
}

/// Writes one value per line with round-trip precision.
pub fn write_series<S: Scalar>(path: &Path, values: &[S]) -> Result<()> {
    let mut out = String::with_capacity(values.len() * 20);
    for v in values {
        out.push_str(&format!("{}\n", v.as_f64()));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: BTreeMap<String, Vec<[usize; 2]>> = serde_json::from_str(&text)?;
    let mut map = LabelMap::new();
    for (channel, entries) in raw {
        let mut intervals = Vec::with_capacity(entries.len());
        for [start, end] in entries {
            if start > end {
                return Err(Error::Ingest {
                    path: path.to_path_buf(),
                    row: 0,
                    reason: format!("{channel}: label [{start}, {end}] ends before it starts"),
                });
            }
            intervals.push(AnomalyInterval::label(start, end));
        }
        intervals.sort();
        map.insert(channel, intervals);
    }
    Ok(map)
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    let raw: BTreeMap<&str, Vec<[usize; 2]>> = labels
        .iter()
        .map(|(k, v)| (k.as_str(), v.iter().map(|l| [l.start, l.end]).collect()))
        .collect();
    let text = serde_json::to_string_pretty(&raw)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn labels_for<'a>(labels: &'a LabelMap, channel_id: &str) -> Option<&'a Vec<AnomalyInterval>> {
    let id = canonical_channel_id(channel_id);
    labels.iter().find(|(k, _)| canonical_channel_id(k) == id).map(|(_, v)| v)
}

/// Loads `<dir>/<channel>_{train,test}.csv` and the channel's labels from
/// `<dir>/labels.json` when that file exists.
pub fn load_channel<S: Scalar, T: AsRef<str>>(
    dir: &Path,
    channel_id: &str,
    exclusions: &[T],
) -> Result<ChannelRecord<S>> {
    let labels_path = dir.join(LABELS_FILE);
    let labels = if labels_path.exists() {
        read_labels(&labels_path)?
    } else {
        LabelMap::new()
    };
    load_channel_with_labels(dir, channel_id, &labels, exclusions)
}

pub fn load_channel_with_labels<S: Scalar, T: AsRef<str>>(
    dir: &Path,
    channel_id: &str,
    labels: &LabelMap,
    exclusions: &[T],
) -> Result<ChannelRecord<S>> {
    let train = read_series(&train_path(dir, channel_id))?;
    let test = read_series(&test_path(dir, channel_id))?;
    let labels = labels_for(labels, channel_id).cloned().unwrap_or_default();
    if let Some(bad) = labels.iter().find(|l| l.end >= test.len()) {
        return Err(Error::Ingest {
            path: dir.join(LABELS_FILE),
            row: 0,
            reason: format!(
                "{channel_id}: label [{}, {}] exceeds test length {}",
                bad.start,
                bad.end,
                test.len()
            ),
        });
    }
    Ok(ChannelRecord {
        channel_id: channel_id.to_string(),
        train,
        test,
        labels,
        excluded: is_excluded(channel_id, exclusions),
    })
}

/// Channel ids with a `_train.csv` file in `dir`, sorted.
pub fn list_channels(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(id) = name.to_str().and_then(|n| n.strip_suffix("_train.csv")) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Affine map taking the training range `[min, max]` onto `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationState {
    pub min: f64,
    pub max: f64,
    pub target: (f64, f64),
}

impl NormalizationState {
    pub fn fit<S: Scalar>(train: &[S]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Precondition("cannot normalize an empty training split".into()));
        }
        let (min, max) = train.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            let v = v.as_f64();
            (lo.min(v), hi.max(v))
        });
        Ok(Self {
            min,
            max,
            target: (-1.0, 1.0),
        })
    }

    fn is_degenerate(&self) -> bool {
        self.max <= self.min
    }

    pub fn apply<S: Scalar>(&self, x: S) -> S {
        let (lo, hi) = self.target;
        if self.is_degenerate() {
            return S::of(0.5 * (lo + hi));
        }
        let scale = S::of((hi - lo) / (self.max - self.min));
        S::of(lo) + (x - S::of(self.min)) * scale
    }

    /// Inverse of [`apply`](Self::apply); a degenerate range maps back to `min`.
    pub fn invert<S: Scalar>(&self, y: S) -> S {
        let (lo, hi) = self.target;
        if self.is_degenerate() {
            return S::of(self.min);
        }
        let scale = S::of((self.max - self.min) / (hi - lo));
        S::of(self.min) + (y - S::of(lo)) * scale
    }
}

/// Scales train to `[-1, 1]` and applies the same map to test.
pub fn normalize<S: Scalar>(train: &[S], test: &[S]) -> Result<(Vec<S>, Vec<S>, NormalizationState)> {
    let state = NormalizationState::fit(train)?;
    let tr = train.iter().map(|&v| state.apply(v)).collect();
    let te = test.iter().map(|&v| state.apply(v)).collect();
    Ok((tr, te, state))
}

pub fn denormalize<S: Scalar>(values: &[S], state: &NormalizationState) -> Vec<S> {
    values.iter().map(|&v| state.invert(v)).collect()
}

/// One row of a forecast file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub index: usize,
    pub actual: f64,
    pub mean: f64,
    pub variance: f64,
    pub lower: f64,
    pub upper: f64,
}

pub const FORECAST_HEADER: &str = "index,actual,mean,variance,lower,upper";

/// Forecast rows with `index` shifted by `-offset` (to express indices in the
/// test frame when the input was prefixed with training context).
pub fn forecast_rows<S: Scalar>(
    dist: &ForecastDistribution<S>,
    actual: &[S],
    offset: usize,
) -> Result<Vec<ForecastRow>> {
    if actual.len() != dist.len() {
        return Err(Error::Contract(format!(
            "{} actual values for {} forecasts",
            actual.len(),
            dist.len()
        )));
    }
    Ok((0..dist.len())
        .map(|j| ForecastRow {
            index: dist.timestamps[j] - offset,
            actual: actual[j].as_f64(),
            mean: dist.mean[j].as_f64(),
            variance: dist.variance[j].as_f64(),
            lower: dist.lower[j].as_f64(),
            upper: dist.upper[j].as_f64(),
        })
        .collect())
}

pub fn write_forecast(path: &Path, rows: &[ForecastRow]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{FORECAST_HEADER}").unwrap();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.index, r.actual, r.mean, r.variance, r.lower, r.upper
        )
        .unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_forecast(path: &Path) -> Result<Vec<ForecastRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

pub const DETECTIONS_HEADER: &str = "channel_id,start,end,trigger_index,n_max";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub channel_id: String,
    pub start: usize,
    pub end: usize,
    pub trigger_index: usize,
    pub n_max: usize,
}

impl DetectionRow {
    pub fn interval(&self) -> AnomalyInterval {
        AnomalyInterval {
            start: self.start,
            end: self.end,
            trigger_index: self.trigger_index,
        }
    }
}

pub fn write_detections(path: &Path, channel_id: &str, n_max: usize, intervals: &[AnomalyInterval]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{DETECTIONS_HEADER}").unwrap();
    for d in intervals {
        writeln!(out, "{channel_id},{},{},{},{n_max}", d.start, d.end, d.trigger_index).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}
