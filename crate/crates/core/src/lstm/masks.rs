use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::Architecture;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One realization of the dropout noise for a whole forward pass.
///
/// Each recurrent mask multiplies `[x_t, h_{t-1}]` of its layer and is reused
/// at every time step. Each dense mask multiplies the input of its dense layer.
/// Kept entries carry the inverted-dropout scale `1 / (1 - p_drop)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks<S> {
    pub recurrent: Vec<Vec<S>>,
    pub dense: Vec<Vec<S>>,
    pub p_drop: f64,
    pub seed: Option<u64>,
    /// Set when `p_drop == 1`: every entry is 0 and the scale is defined as 0.
    pub degenerate: bool,
}

impl<S: Scalar> DropoutMasks<S> {
    /// Masks that keep everything; the deterministic network.
    pub fn ones(arch: &Architecture) -> Self {
        let (recurrent, dense) = mask_shapes(arch);
        Self {
            recurrent: recurrent.into_iter().map(|n| vec![S::one(); n]).collect(),
            dense: dense.into_iter().map(|n| vec![S::one(); n]).collect(),
            p_drop: 0.0,
            seed: None,
            degenerate: false,
        }
    }

    pub fn sample(arch: &Architecture, p_drop: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut masks = Self::sample_with(arch, p_drop, &mut rng)?;
        masks.seed = Some(seed);
        Ok(masks)
    }

    pub fn sample_with<R: Rng + ?Sized>(arch: &Architecture, p_drop: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_drop) {
            return Err(Error::Precondition(format!(
                "dropout probability {p_drop} is outside [0, 1]"
            )));
        }
        let degenerate = p_drop == 1.0;
        if degenerate {
            log::warn!("p_drop = 1 drops every unit; masks are all zero");
        }
        let scale = if degenerate {
            S::zero()
        } else {
            S::of(1.0 / (1.0 - p_drop))
        };
        let mut draw = |n: usize| -> Vec<S> {
            (0..n)
                .map(|_| {
                    if rng.gen::<f64>() < p_drop {
                        S::zero()
                    } else {
                        scale
                    }
                })
                .collect()
        };
        let (recurrent, dense) = mask_shapes(arch);
        let recurrent = recurrent.into_iter().map(&mut draw).collect();
        let dense = dense.into_iter().map(&mut draw).collect();
        Ok(Self {
            recurrent,
            dense,
            p_drop,
            seed: None,
            degenerate,
        })
    }

    /// Fraction of zero entries over all masks.
    pub fn zero_fraction(&self) -> f64 {
        let (zeros, total) = self
            .recurrent
            .iter()
            .chain(&self.dense)
            .flatten()
            .fold((0usize, 0usize), |(z, t), &v| (z + (v == S::zero()) as usize, t + 1));
        if total == 0 {
            0.0
        } else {
            zeros as f64 / total as f64
        }
    }

    pub fn matches(&self, arch: &Architecture) -> bool {
        let (recurrent, dense) = mask_shapes(arch);
        self.recurrent.len() == recurrent.len()
            && self.dense.len() == dense.len()
            && self.recurrent.iter().zip(&recurrent).all(|(m, &n)| m.len() == n)
            && self.dense.iter().zip(&dense).all(|(m, &n)| m.len() == n)
    }
}

fn mask_shapes(arch: &Architecture) -> (Vec<usize>, Vec<usize>) {
    let recurrent = (0..arch.lstm_hidden.len())
        .map(|l| arch.lstm_input(l) + arch.lstm_hidden[l])
        .collect();
    let dense = (0..arch.dense_units.len()).map(|k| arch.dense_input(k)).collect();
    (recurrent, dense)
}
