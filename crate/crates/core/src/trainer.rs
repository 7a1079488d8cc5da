//! Mini-batch training of the forecaster.
//!
//! The objective is the mean squared one-step-ahead error plus `λ·Σ‖W‖²` over
//! all weight matrices. Every training sequence gets its own freshly sampled
//! dropout masks, so each gradient step sees a different network realization.
//! The per-epoch history reports the dropout-free training error of the
//! parameters reached at the end of the epoch.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{backward_into, forward, predict, Architecture, DropoutMasks, ModelParams};
use crate::preprocess::SmoothedSeries;
use crate::scalar::Scalar;

/// Fixed number of gradient accumulators per batch. Chunking does not depend
/// on the thread count, so the reduction order is always the same.
const GRAD_CHUNKS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// λ of the weight penalty.
    pub weight_decay: f64,
    pub p_drop: f64,
    /// Number of past samples fed to the network per prediction.
    pub lookback: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub shuffle: bool,
    pub early_stopping: bool,
    /// Trailing fraction of the windows held out when early stopping is on.
    pub validation_fraction: f64,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            p_drop: 0.2,
            lookback: 2,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
            shuffle: true,
            early_stopping: false,
            validation_fraction: 0.1,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Precondition(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return fail("p_drop must lie in [0, 1) for training");
        }
        if self.lookback == 0 {
            return fail("lookback must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("Adam betas must lie in [0, 1)");
        }
        if self.early_stopping && !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return fail("validation_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Loss split into its data-fit and regularization parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<S> {
    pub data_term: S,
    pub reg_term: S,
    pub total: S,
}

impl<S: Scalar> LossBreakdown<S> {
    pub fn new(data_term: S, reg_term: S, lambda: S) -> Self {
        Self {
            data_term,
            reg_term,
            total: data_term + lambda * reg_term,
        }
    }
}

pub fn loss<S: Scalar>(
    predictions: &[S],
    targets: &[S],
    params: &ModelParams<S>,
    lambda: S,
) -> Result<LossBreakdown<S>> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::Contract(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if lambda < S::zero() {
        return Err(Error::Precondition("lambda must be non-negative".into()));
    }
    let data = crate::metrics::mse(targets, predictions)?;
    Ok(LossBreakdown::new(data, params.weight_sq_norm(), lambda))
}

/// Splits a series into `(values[i..i+T], values[i+T])` pairs.
pub fn make_windows<S: Scalar>(series: &[S], lookback: usize) -> Result<(Vec<Vec<S>>, Vec<S>)> {
    if lookback == 0 {
        return Err(Error::Precondition("lookback must be at least 1".into()));
    }
    if series.len() <= lookback {
        return Err(Error::TooShort {
            len: series.len(),
            lookback,
        });
    }
    let inputs = series.windows(lookback + 1).map(|w| w[..lookback].to_vec()).collect();
    let targets = series[lookback..].to_vec();
    Ok((inputs, targets))
}

struct Adam<S> {
    m: ModelParams<S>,
    v: ModelParams<S>,
    t: i32,
}

impl<S: Scalar> Adam<S> {
    fn new(arch: &Architecture) -> Result<Self> {
        Ok(Self {
            m: ModelParams::zeros(arch)?,
            v: ModelParams::zeros(arch)?,
            t: 0,
        })
    }

    fn step(&mut self, params: &mut ModelParams<S>, grads: &ModelParams<S>, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
        let lr = S::of(cfg.learning_rate);
        let eps = S::of(cfg.epsilon);
        let c1 = S::one() - b1.powi(self.t);
        let c2 = S::one() - b2.powi(self.t);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for ((p, g), (m, v)) in tensors {
            for (((w, &gi), mi), vi) in p
                .values
                .iter_mut()
                .zip(g.values)
                .zip(m.values.iter_mut())
                .zip(v.values.iter_mut())
            {
                *mi = b1 * *mi + (S::one() - b1) * gi;
                *vi = b2 * *vi + (S::one() - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

pub fn train<S: Scalar>(
    series: &SmoothedSeries<S>,
    arch: &Architecture,
    config: &TrainConfig,
) -> Result<(ModelParams<S>, Vec<LossBreakdown<S>>)> {
    train_with(series, arch, config, |_, _| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with<S: Scalar>(
    series: &SmoothedSeries<S>,
    arch: &Architecture,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &LossBreakdown<S>),
) -> Result<(ModelParams<S>, Vec<LossBreakdown<S>>)> {
    config.validate()?;
    arch.validate()?;
    if arch.input_dim != 1 {
        return Err(Error::Shape("training expects a univariate series".into()));
    }
    let (inputs, targets) = make_windows(series.values(), config.lookback)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(arch, &mut rng)?;
    let mut history = Vec::with_capacity(config.epochs);
    if config.epochs == 0 {
        return Ok((params, history));
    }

    let n_val = if config.early_stopping {
        ((inputs.len() as f64) * config.validation_fraction).floor() as usize
    } else {
        0
    };
    let n_train = inputs.len() - n_val;
    if n_train == 0 {
        return Err(Error::TooShort {
            len: series.len(),
            lookback: config.lookback,
        });
    }
    let lambda = S::of(config.weight_decay);
    let mut adam = Adam::new(arch)?;
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut best: Option<(S, ModelParams<S>)> = None;
    let mut stale = 0usize;

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut sq_sum = S::zero();
        for batch in order.chunks(config.batch_size) {
            let masks = batch
                .iter()
                .map(|_| DropoutMasks::sample_with(arch, config.p_drop, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let scale = S::of(2.0) / S::of_usize(batch.len());
            let chunk_len = batch.len().div_ceil(GRAD_CHUNKS.min(batch.len()));
            let partials = batch
                .par_chunks(chunk_len)
                .zip(masks.par_chunks(chunk_len))
                .map(|(idx, mk)| -> Result<(S, ModelParams<S>)> {
                    let mut grads = ModelParams::zeros(arch)?;
                    let mut sq = S::zero();
                    for (&i, m) in idx.iter().zip(mk) {
                        let (pred, cache) = forward(&inputs[i], &params, m)?;
                        let err = pred - targets[i];
                        sq += err * err;
                        backward_into(&params, &cache, scale * err, &mut grads)?;
                    }
                    Ok((sq, grads))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut parts = partials.into_iter();
            let (first_sq, mut grads) = parts.next().expect("batch is non-empty");
            sq_sum += first_sq;
            for (sq, g) in parts {
                sq_sum += sq;
                grads.add_assign(&g);
            }
            add_weight_penalty(&mut grads, &params, lambda);
            if clip_global_norm(&mut grads, S::of(config.clip_norm)).is_none() {
                return Err(Error::Diverged { epoch });
            }
            adam.step(&mut params, &grads, config);
        }
        if !sq_sum.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let data = mean_network_mse(&params, &inputs[..n_train], &targets[..n_train])?;
        let entry = LossBreakdown::new(data, params.weight_sq_norm(), lambda);
        if !entry.total.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        on_epoch(epoch, &entry);
        history.push(entry);

        if n_val > 0 {
            let val = mean_network_mse(&params, &inputs[n_train..], &targets[n_train..])?;
            match &best {
                Some((b, _)) if val >= *b => stale += 1,
                _ => {
                    best = Some((val, params.clone()));
                    stale = 0;
                }
            }
            if stale >= config.patience {
                log::info!("early stopping after epoch {epoch}");
                break;
            }
        }
    }
    if let Some((_, p)) = best {
        params = p;
    }
    Ok((params, history))
}

/// Squared error of the dropout-free network. Errors are computed in parallel
/// and summed in index order.
fn mean_network_mse<S: Scalar>(params: &ModelParams<S>, inputs: &[Vec<S>], targets: &[S]) -> Result<S> {
    let masks = DropoutMasks::ones(&params.architecture());
    let errors = inputs
        .par_iter()
        .zip(targets)
        .map(|(x, &y)| predict(x, params, &masks).map(|p| (p - y) * (p - y)))
        .collect::<Result<Vec<S>>>()?;
    Ok(errors.into_iter().sum::<S>() / S::of_usize(targets.len()))
}

fn add_weight_penalty<S: Scalar>(grads: &mut ModelParams<S>, params: &ModelParams<S>, lambda: S) {
    if lambda == S::zero() {
        return;
    }
    let two_lambda = S::of(2.0) * lambda;
    for (g, p) in grads.tensors_mut().into_iter().zip(params.tensors()) {
        if p.is_weight {
            for (gi, &w) in g.values.iter_mut().zip(p.values) {
                *gi += two_lambda * w;
            }
        }
    }
}

/// Rescales `grads` to at most `max_norm`. Returns `None` if the norm is not finite.
fn clip_global_norm<S: Scalar>(grads: &mut ModelParams<S>, max_norm: S) -> Option<S> {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|t| t.values.iter())
        .map(|&g| g * g)
        .sum::<S>()
        .sqrt();
    if !norm.is_finite() {
        return None;
    }
    if max_norm > S::zero() && norm > max_norm {
        let k = max_norm / norm;
        for t in grads.tensors_mut() {
            t.values.iter_mut().for_each(|g| *g *= k);
        }
    }
    Some(norm)
}
