//! Monte Carlo dropout inference.
//!
//! Dropout stays active at prediction time. Each of the `l` passes samples one
//! set of masks (seed `seed + pass`) and uses it for every forecast index, so
//! a pass is one coherent network realization. The passes are reduced into a
//! per-index mean, population variance and a `mean ± z·σ` band.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lstm::{predict, DropoutMasks, ModelParams};
use crate::preprocess::SmoothedSeries;
use crate::scalar::Scalar;
use crate::trainer::make_windows;

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastDistribution<S> {
    /// Index into the input series of each forecast target.
    pub timestamps: Vec<usize>,
    /// `samples[pass][j]`.
    pub samples: Vec<Vec<S>>,
    pub mean: Vec<S>,
    pub variance: Vec<S>,
    pub lower: Vec<S>,
    pub upper: Vec<S>,
    pub z_mult: S,
}

impl<S: Scalar> ForecastDistribution<S> {
    /// Aggregates a pass-by-index sample matrix.
    pub fn from_samples(timestamps: Vec<usize>, samples: Vec<Vec<S>>, z_mult: S) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Precondition("need at least one Monte Carlo pass".into()));
        }
        if !(z_mult > S::zero()) {
            return Err(Error::Precondition("z_mult must be positive".into()));
        }
        let n = timestamps.len();
        if samples.iter().any(|row| row.len() != n) {
            return Err(Error::Shape("every pass must cover every timestamp".into()));
        }
        let mut mean = Vec::with_capacity(n);
        let mut variance = Vec::with_capacity(n);
        for j in 0..n {
            let (m, v) = moments(samples.iter().map(|row| row[j]), samples.len());
            mean.push(m);
            variance.push(v);
        }
        let (lower, upper) = bounds(&mean, &variance, z_mult);
        Ok(Self {
            timestamps,
            samples,
            mean,
            variance,
            lower,
            upper,
            z_mult,
        })
    }

    pub fn passes(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Rebuilds the band for another multiplier, keeping the samples.
    pub fn with_z_mult(&self, z_mult: S) -> Result<Self> {
        Self::from_samples(self.timestamps.clone(), self.samples.clone(), z_mult)
    }
}

/// First two moments of the pass outputs, accumulated relative to the first
/// sample: `E[y] = s₀ + E[d]`, `Var = E[d²] − E[d]²` with `d = y − s₀`. Identical
/// samples therefore give exactly zero variance.
fn moments<S: Scalar>(values: impl Iterator<Item = S>, count: usize) -> (S, S) {
    let mut values = values.peekable();
    let shift = *values.peek().expect("count > 0");
    let (mut sum, mut sum_sq) = (S::zero(), S::zero());
    for v in values {
        let d = v - shift;
        sum += d;
        sum_sq += d * d;
    }
    let l = S::of_usize(count);
    let mean_d = sum / l;
    let var = sum_sq / l - mean_d * mean_d;
    if var < S::of(-1e-12) {
        log::warn!("negative variance {var} clamped to zero");
    }
    (shift + mean_d, var.max(S::zero()))
}

fn bounds<S: Scalar>(mean: &[S], variance: &[S], z: S) -> (Vec<S>, Vec<S>) {
    mean.iter()
        .zip(variance)
        .map(|(&m, &v)| {
            let half = z * v.sqrt();
            (m - half, m + half)
        })
        .unzip()
}

/// One-step-ahead forecast distribution for every index `t ≥ lookback` of `series`.
pub fn predict_dist<S: Scalar>(
    series: &SmoothedSeries<S>,
    params: &ModelParams<S>,
    lookback: usize,
    passes: usize,
    p_drop: f64,
    z_mult: S,
    seed: u64,
) -> Result<ForecastDistribution<S>> {
    if passes == 0 {
        return Err(Error::Precondition("l must be at least 1".into()));
    }
    let arch = params.architecture();
    let (inputs, _) = make_windows(series.values(), lookback)?;
    let timestamps: Vec<usize> = (lookback..series.len()).collect();

    let samples = (0..passes)
        .into_par_iter()
        .map(|pass| -> Result<Vec<S>> {
            let masks = DropoutMasks::sample(&arch, p_drop, seed.wrapping_add(pass as u64))?;
            inputs.iter().map(|x| predict(x, params, &masks)).collect()
        })
        .collect::<Result<Vec<_>>>()?;
    ForecastDistribution::from_samples(timestamps, samples, z_mult)
}

/// Fraction of `actual` inside the closed band `[lower, upper]`.
pub fn coverage<S: Scalar>(dist: &ForecastDistribution<S>, actual: &[S]) -> Result<f64> {
    if actual.len() != dist.len() {
        return Err(Error::Contract(format!(
            "{} actual values for {} forecasts",
            actual.len(),
            dist.len()
        )));
    }
    if actual.is_empty() {
        return Ok(0.0);
    }
    let inside = actual
        .iter()
        .zip(dist.lower.iter().zip(&dist.upper))
        .filter(|(&a, (&lo, &hi))| lo <= a && a <= hi)
        .count();
    Ok(inside as f64 / actual.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_pass_aggregation() {
        let (a, b, c): (f64, f64, f64) = (0.5, -0.25, 1.0);
        let d = ForecastDistribution::from_samples(vec![7], vec![vec![a], vec![b], vec![c]], 2.0).unwrap();
        let mean = (a + b + c) / 3.0;
        let var = (a * a + b * b + c * c) / 3.0 - mean * mean;
        assert!((d.mean[0] - mean).abs() < 1e-15);
        assert!((d.variance[0] - var).abs() < 1e-15);
        assert!((d.upper[0] - (mean + 2.0 * var.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn identical_samples_have_zero_variance() {
        let s = vec![vec![0.1, 0.7]; 10];
        let d = ForecastDistribution::from_samples(vec![0, 1], s, 2.0).unwrap();
        assert_eq!(d.variance, vec![0.0, 0.0]);
        assert_eq!(d.mean, vec![0.1, 0.7]);
        assert_eq!(d.lower, d.upper);
    }

    #[test]
    fn single_pass_has_zero_variance() {
        let d = ForecastDistribution::from_samples(vec![0, 1, 2], vec![vec![0.3, -2.0, 5.5]], 2.0).unwrap();
        assert!(d.variance.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ForecastDistribution::<f64>::from_samples(vec![0], vec![], 2.0).is_err());
        assert!(ForecastDistribution::from_samples(vec![0], vec![vec![1.0]], 0.0).is_err());
        assert!(ForecastDistribution::from_samples(vec![0, 1], vec![vec![1.0]], 1.0).is_err());
    }

    #[test]
    fn coverage_examples() {
        let d = ForecastDistribution::from_samples(vec![0, 1], vec![vec![0.0, 1.0], vec![1.0, 2.0]], 1.0)
            .unwrap();
        assert_eq!(coverage(&d, &d.mean).unwrap(), 1.0);
        let above: Vec<f64> = d.upper.iter().map(|u| u + 1.0).collect();
        assert_eq!(coverage(&d, &above).unwrap(), 0.0);
        assert_eq!(coverage(&d, &d.upper.clone()).unwrap(), 1.0);
        assert!(coverage(&d, &[0.0]).is_err());
    }
}
