//! Run configuration: TOML file with documented defaults, overridden by flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mcd_telemetry::dataio::EXCLUDED_CHANNELS;
use mcd_telemetry::detector::DEFAULT_CANDIDATES;
use mcd_telemetry::preprocess::SmoothConfig;
use mcd_telemetry::{Architecture, TrainConfig, TriggerRule};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Environment variable holding the default dataset root.
pub const DATA_ENV: &str = "MCD_TELEMETRY_DATA";

/// Either every channel found in the dataset directory or an explicit list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ChannelSelection {
    #[default]
    All,
    List(Vec<String>),
}

impl ChannelSelection {
    /// Parses `all` or a comma-separated list; an empty string is an empty list.
    pub fn parse(s: &str) -> Self {
        if s.trim().eq_ignore_ascii_case("all") {
            return Self::All;
        }
        Self::List(
            s.split(',')
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .map(String::from)
                .collect(),
        )
    }
}

impl fmt::Display for ChannelSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::All => f.write_str("all"),
            Self::List(l) => f.write_str(&l.join(",")),
        }
    }
}

impl Serialize for ChannelSelection {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::All => s.serialize_str("all"),
            Self::List(l) => l.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for ChannelSelection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            List(Vec<String>),
        }
        match Raw::deserialize(d)? {
            Raw::Word(w) if w.eq_ignore_ascii_case("all") => Ok(Self::All),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "channels must be \"all\" or a list, got {w:?}"
            ))),
            Raw::List(l) => Ok(Self::List(l)),
        }
    }
}

/// Optimizer settings; dropout, lookback and seed live at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
    pub shuffle: bool,
    pub early_stopping: bool,
    pub validation_fraction: f64,
    pub patience: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            clip_norm: t.clip_norm,
            shuffle: t.shuffle,
            early_stopping: t.early_stopping,
            validation_fraction: t.validation_fraction,
            patience: t.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    /// Window length used by `detect` when no sweep has picked one.
    pub n_max: usize,
    /// Grid searched by `sweep`.
    pub candidates: Vec<usize>,
    pub rule: TriggerRule,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            n_max: 8,
            candidates: DEFAULT_CANDIDATES.to_vec(),
            rule: TriggerRule::Density,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory with `<id>_train.csv`, `<id>_test.csv` and `labels.json`.
    pub dataset_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub channels: ChannelSelection,
    /// Channels skipped with an "excluded" row.
    pub exclusions: Vec<String>,
    pub seed: u64,
    pub p_drop: f64,
    pub lookback: usize,
    /// Monte Carlo passes `l`.
    pub mc_passes: usize,
    pub z_mult: f64,
    /// Evaluation tolerance after a label's start, in points.
    pub max_delay: usize,
    /// Smooth the test split as well as the training split.
    pub smooth_test: bool,
    /// Channel worker threads; 0 uses one per core.
    pub workers: usize,
    pub smoothing: SmoothConfig,
    pub architecture: Architecture,
    pub trainer: TrainerSection,
    pub detector: DetectorSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            dataset_dir: None,
            output_dir: PathBuf::from("mcd-run"),
            channels: ChannelSelection::All,
            exclusions: EXCLUDED_CHANNELS.iter().map(|s| s.to_string()).collect(),
            seed: t.seed,
            p_drop: t.p_drop,
            lookback: t.lookback,
            mc_passes: 30,
            z_mult: 2.0,
            max_delay: 100,
            smooth_test: true,
            workers: 0,
            smoothing: SmoothConfig::default(),
            architecture: Architecture::default(),
            trainer: TrainerSection::default(),
            detector: DetectorSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.trainer;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            p_drop: self.p_drop,
            lookback: self.lookback,
            seed: self.seed,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            clip_norm: t.clip_norm,
            shuffle: t.shuffle,
            early_stopping: t.early_stopping,
            validation_fraction: t.validation_fraction,
            patience: t.patience,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.architecture.validate()?;
        self.smoothing.validate()?;
        if self.architecture.input_dim != 1 {
            bail!("architecture.input_dim must be 1 for univariate telemetry");
        }
        if self.mc_passes == 0 {
            bail!("mc_passes must be at least 1");
        }
        if !(self.z_mult > 0.0) {
            bail!("z_mult must be positive");
        }
        if self.detector.n_max == 0 {
            bail!("detector.n_max must be at least 1");
        }
        if self.detector.candidates.is_empty() || self.detector.candidates.contains(&0) {
            bail!("detector.candidates must be non-empty and positive");
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> Result<&Path> {
        let Some(dir) = self.dataset_dir.as_deref() else {
            bail!("no dataset directory: pass --dataset-dir, set {DATA_ENV}, or set dataset_dir in the config");
        };
        if !dir.is_dir() {
            bail!("dataset directory {} does not exist", dir.display());
        }
        Ok(dir)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}
