//! Spacecraft telemetry anomaly detection with a Monte Carlo dropout LSTM.
//!
//! The pipeline is:
//!
//! 1. [`preprocess`]: adaptive-window smoothing that leaves abrupt changes intact.
//! 2. [`trainer`]: one-step-ahead LSTM forecaster trained with dropout active.
//! 3. [`mcinfer`]: repeated stochastic forward passes giving a predictive mean,
//!    variance and confidence band.
//! 4. [`detector`]: windows dense with out-of-band points become anomalies.
//! 5. [`metrics`]: delay-aware sequence-level confusion counts and scores.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix it to `f64`.

pub mod dataio;
pub mod detector;
pub mod error;
pub mod lstm;
pub mod mcinfer;
pub mod metrics;
pub mod preprocess;
pub mod scalar;
pub mod trainer;

pub use detector::{AnomalyInterval, NmaxSweepResult, OutsideFlags, TriggerRule};
pub use error::{Error, Result};
pub use lstm::{Architecture, Checkpoint, DropoutMasks, ModelParams};
pub use mcinfer::ForecastDistribution;
pub use metrics::{ConfusionCounts, MetricReport};
pub use preprocess::{RawSeries, SmoothConfig, SmoothedSeries};
pub use scalar::Scalar;
pub use trainer::{LossBreakdown, TrainConfig};

pub type RawSeriesF64 = RawSeries<f64>;
pub type SmoothedSeriesF64 = SmoothedSeries<f64>;
pub type ModelParamsF64 = ModelParams<f64>;
pub type DropoutMasksF64 = DropoutMasks<f64>;
pub type ForecastDistributionF64 = ForecastDistribution<f64>;
pub type CheckpointF64 = Checkpoint<f64>;
pub type LossBreakdownF64 = LossBreakdown<f64>;

pub type ModelParamsF32 = ModelParams<f32>;
pub type ForecastDistributionF32 = ForecastDistribution<f32>;
