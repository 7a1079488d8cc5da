//! Versioned JSON checkpoint.
//!
//! ```json
//! {
//!   "format": "mcd-telemetry-checkpoint",
//!   "version": 1,
//!   "scalar": "f64",
//!   "architecture": {"input_dim": 1, "lstm_hidden": [64, 64, 64], "dense_units": [32, 1]},
//!   "lookback": 2,
//!   "train_config": { ... } | null,
//!   "normalization": {"min": .., "max": .., "target": [-1.0, 1.0]} | null,
//!   "tensors": [{"name": "lstm0.w_i", "shape": [64, 65], "data": [...]}, ...]
//! }
//! ```
//!
//! Tensors appear in the order of [`ModelParams::tensors`]; matrices are
//! row-major and values are written as `f64` with round-trip precision.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Architecture, ModelParams};
use crate::dataio::NormalizationState;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trainer::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "mcd-telemetry-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S> {
    pub params: ModelParams<S>,
    pub lookback: usize,
    pub train_config: Option<TrainConfig>,
    pub normalization: Option<NormalizationState>,
}

#[derive(Serialize, Deserialize)]
struct WireTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Wire {
    format: String,
    version: u32,
    scalar: String,
    architecture: Architecture,
    lookback: usize,
    train_config: Option<TrainConfig>,
    normalization: Option<NormalizationState>,
    tensors: Vec<WireTensor>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn to_json(&self) -> Result<String> {
        let arch = self.params.architecture();
        let tensors = self
            .params
            .tensors()
            .into_iter()
            .zip(tensor_shapes(&self.params))
            .map(|(t, shape)| WireTensor {
                name: t.name,
                shape,
                data: t.values.iter().map(|v| v.as_f64()).collect(),
            })
            .collect();
        let wire = Wire {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            scalar: S::NAME.into(),
            architecture: arch,
            lookback: self.lookback,
            train_config: self.train_config.clone(),
            normalization: self.normalization,
            tensors,
        };
        Ok(serde_json::to_string(&wire)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: Wire = serde_json::from_str(text)?;
        if wire.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", wire.format)));
        }
        if wire.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", wire.version)));
        }
        let mut params = ModelParams::<S>::zeros(&wire.architecture)?;
        let shapes = tensor_shapes(&params);
        let slots = params.tensors_mut();
        if slots.len() != wire.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                slots.len(),
                wire.tensors.len()
            )));
        }
        for ((slot, shape), t) in slots.into_iter().zip(shapes).zip(&wire.tensors) {
            if slot.name != t.name || shape != t.shape || slot.values.len() != t.data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.shape, slot.name, shape
                )));
            }
            for (dst, &v) in slot.values.iter_mut().zip(&t.data) {
                *dst = S::of(v);
            }
        }
        params.validate()?;
        Ok(Self {
            params,
            lookback: wire.lookback,
            train_config: wire.train_config,
            normalization: wire.normalization,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn tensor_shapes<S: Scalar>(p: &ModelParams<S>) -> Vec<Vec<usize>> {
    let mut shapes = Vec::new();
    for l in &p.lstm_layers {
        for m in [&l.w_i, &l.w_f, &l.w_o, &l.w_c] {
            shapes.push(vec![m.rows(), m.cols()]);
        }
        for b in [&l.b_i, &l.b_f, &l.b_o, &l.b_c] {
            shapes.push(vec![b.len()]);
        }
    }
    for d in &p.dense_layers {
        shapes.push(vec![d.weight.rows(), d.weight.cols()]);
        shapes.push(vec![d.bias.len()]);
    }
    shapes
}
