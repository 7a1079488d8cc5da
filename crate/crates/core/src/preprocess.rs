//! Adaptive-length moving-average smoothing.
//!
//! For each index `k` the filter estimates how large a jump between successive
//! samples is "normal" from the jumps just before `k` (mean plus two population
//! standard deviations), then grows a window around `k` one offset at a time,
//! alternating past and future, until it meets a jump above that threshold.
//! The output is the unweighted mean of the accepted samples. If the jump into
//! `k` itself is above the threshold the window collapses to `k` alone, so
//! abrupt changes pass through unchanged.
//!
//! The reference length carries over between indices: it is the size of the
//! window accepted at `k - 1`, reset to `init_len` whenever a window collapses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries<S> {
    channel_id: String,
    values: Vec<S>,
}

impl<S: Scalar> RawSeries<S> {
    pub fn new(channel_id: impl Into<String>, values: Vec<S>) -> Result<Self> {
        check_values(&values)?;
        Ok(Self {
            channel_id: channel_id.into(),
            values,
        })
    }

    pub fn channel_id(&self) -> &str {
        &self.channel_id
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedSeries<S> {
    source_channel: String,
    values: Vec<S>,
}

impl<S: Scalar> SmoothedSeries<S> {
    /// Wraps already-smoothed values, e.g. when reading them back from disk.
    pub fn from_values(source_channel: impl Into<String>, values: Vec<S>) -> Result<Self> {
        check_values(&values)?;
        Ok(Self {
            source_channel: source_channel.into(),
            values,
        })
    }

    pub fn source_channel(&self) -> &str {
        &self.source_channel
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_values<S: Scalar>(values: &[S]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Precondition("series must contain at least one value".into()));
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation {
            index,
            reason: "value is not finite".into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothConfig {
    /// Reference window length at the start of the series and after a collapse.
    pub init_len: usize,
    /// Upper bound on the window length; the window spans at most
    /// `max_len / 2` samples on either side of `k`.
    pub max_len: usize,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        Self {
            init_len: 2,
            max_len: 32,
        }
    }
}

impl SmoothConfig {
    pub fn validate(&self) -> Result<()> {
        if self.init_len == 0 {
            return Err(Error::Precondition("init_len must be positive".into()));
        }
        if self.max_len < self.init_len {
            return Err(Error::Precondition(format!(
                "max_len {} is smaller than init_len {}",
                self.max_len, self.init_len
            )));
        }
        Ok(())
    }
}

/// Mean, population standard deviation and jump threshold of a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats<S> {
    pub mean: S,
    pub sigma: S,
    pub threshold: S,
}

/// `|u(k-i-1) - u(k-i)|`, the jump into sample `k - i` from its predecessor.
pub fn distance<S: Scalar>(series: &RawSeries<S>, k: usize, i: isize) -> Result<S> {
    let len = series.len();
    let idx = k as isize - i;
    if idx < 1 || idx >= len as isize {
        let bad = if idx < 1 { idx - 1 } else { idx };
        return Err(Error::OutOfBounds { index: bad, len });
    }
    let idx = idx as usize;
    Ok((series.values[idx - 1] - series.values[idx]).abs())
}

pub fn window_threshold<S: Scalar>(window_values: &[S]) -> Result<WindowStats<S>> {
    if window_values.is_empty() {
        return Err(Error::Precondition("threshold window is empty".into()));
    }
    let count = S::of_usize(window_values.len());
    let mean = window_values.iter().copied().sum::<S>() / count;
    let var = window_values
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<S>()
        / count;
    let sigma = var.sqrt();
    Ok(WindowStats {
        mean,
        sigma,
        threshold: mean + S::of(2.0) * sigma,
    })
}

/// The window chosen for one output sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowState<S> {
    pub k: usize,
    /// Reference length used for the threshold statistics at `k`.
    pub reference_len: usize,
    /// Offsets `i` with coefficient 1, in the order they were accepted
    /// (sample `k - i`). Always starts with 0.
    pub offsets: Vec<isize>,
    /// `None` when no jumps precede `k`.
    pub stats: Option<WindowStats<S>>,
    /// True when the window reduced to the sample itself.
    pub collapsed: bool,
}

impl<S: Scalar> WindowState<S> {
    /// Window length `|κ|₁`, the number of unit coefficients.
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn alpha(&self, offset: isize) -> S {
        if self.offsets.contains(&offset) {
            S::one()
        } else {
            S::zero()
        }
    }
}

pub fn smooth<S: Scalar>(raw: &RawSeries<S>, config: &SmoothConfig) -> Result<SmoothedSeries<S>> {
    config.validate()?;
    let values = smooth_values(raw.values(), config, |_| {});
    Ok(SmoothedSeries {
        source_channel: raw.channel_id.clone(),
        values,
    })
}

/// Same as [`smooth`], additionally returning the window chosen at every index.
pub fn smooth_traced<S: Scalar>(
    raw: &RawSeries<S>,
    config: &SmoothConfig,
) -> Result<(SmoothedSeries<S>, Vec<WindowState<S>>)> {
    config.validate()?;
    let mut trace = Vec::with_capacity(raw.len());
    let values = smooth_values(raw.values(), config, |w| trace.push(w));
    Ok((
        SmoothedSeries {
            source_channel: raw.channel_id.clone(),
            values,
        },
        trace,
    ))
}

fn smooth_values<S: Scalar>(
    u: &[S],
    config: &SmoothConfig,
    mut observe: impl FnMut(WindowState<S>),
) -> Vec<S> {
    let n = u.len();
    // jumps[j] = |u[j-1] - u[j]|; jumps[0] is unused.
    let mut jumps = vec![S::zero(); n];
    for j in 1..n {
        jumps[j] = (u[j - 1] - u[j]).abs();
    }
    let half = (config.max_len / 2) as isize;
    let mut reference_len = config.init_len;
    let mut out = Vec::with_capacity(n);

    for k in 0..n {
        let lo = k.saturating_sub(reference_len).max(1);
        let stats = if lo < k {
            // Non-empty by construction.
            window_threshold(&jumps[lo..k]).ok()
        } else {
            None
        };
        let calm = match stats {
            Some(s) => !(k >= 1 && jumps[k] > s.threshold),
            None => false,
        };
        if !calm {
            out.push(u[k]);
            observe(WindowState {
                k,
                reference_len,
                offsets: vec![0],
                stats,
                collapsed: true,
            });
            reference_len = config.init_len;
            continue;
        }
        let threshold = stats.map(|s| s.threshold).unwrap_or_else(S::zero);

        let mut sum = u[k];
        let mut offsets = vec![0isize];
        'grow: for r in 1..=half {
            let mut in_range = false;
            for i in [r, -r] {
                let idx = k as isize - i;
                if idx < 0 || idx >= n as isize {
                    continue;
                }
                in_range = true;
                let idx = idx as usize;
                if idx >= 1 && jumps[idx] > threshold {
                    break 'grow;
                }
                sum += u[idx];
                offsets.push(i);
            }
            if !in_range {
                break;
            }
        }
        out.push(sum / S::of_usize(offsets.len()));
        let accepted = offsets.len();
        observe(WindowState {
            k,
            reference_len,
            offsets,
            stats,
            collapsed: false,
        });
        reference_len = accepted.clamp(config.init_len, config.max_len);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(values: &[f64]) -> RawSeries<f64> {
        RawSeries::new("T-1", values.to_vec()).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance(&raw(&[3.0, 3.0]), 1, 0).unwrap(), 0.0);
        assert_eq!(distance(&raw(&[0.0, 10.0]), 1, 0).unwrap(), 10.0);
        assert_eq!(distance(&raw(&[1.0, 2.0, 3.0, 5.0]), 3, 0).unwrap(), 2.0);
        // offset i = 1 looks one step back
        assert_eq!(distance(&raw(&[1.0, 2.0, 3.0, 5.0]), 3, 1).unwrap(), 1.0);
    }

    #[test]
    fn distance_out_of_range() {
        let s = raw(&[1.0, 2.0]);
        assert!(matches!(distance(&s, 0, 0), Err(Error::OutOfBounds { .. })));
        assert!(matches!(distance(&s, 1, -1), Err(Error::OutOfBounds { .. })));
        assert!(matches!(distance(&s, 1, 1), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn threshold_examples() {
        let s = window_threshold(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((s.mean, s.sigma, s.threshold), (5.0, 0.0, 5.0));
        let s = window_threshold(&[0.0, 10.0]).unwrap();
        assert_eq!((s.mean, s.sigma, s.threshold), (5.0, 5.0, 15.0));
        let s = window_threshold(&[1.0]).unwrap();
        assert_eq!((s.mean, s.sigma, s.threshold), (1.0, 0.0, 1.0));
        assert!(window_threshold::<f64>(&[]).is_err());
    }

    #[test]
    fn constant_is_fixed_point() {
        let out = smooth(&raw(&[5.0; 5]), &SmoothConfig::default()).unwrap();
        assert_eq!(out.values(), &[5.0; 5]);
    }

    #[test]
    fn spike_survives() {
        let out = smooth(&raw(&[0.0, 0.0, 10.0, 0.0, 0.0]), &SmoothConfig::default()).unwrap();
        assert_eq!(out.values()[2], 10.0);
    }

    #[test]
    fn ramp() {
        // Edges clip the window asymmetrically, so the tail pulls towards the mean.
        let out = smooth(&raw(&[1.0, 2.0, 3.0, 4.0, 5.0]), &SmoothConfig::default()).unwrap();
        assert_eq!(out.values(), &[1.0, 2.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RawSeries::<f64>::new("x", vec![]).is_err());
        assert!(matches!(
            RawSeries::new("x", vec![1.0, f64::NAN]),
            Err(Error::Validation { index: 1, .. })
        ));
        let bad = SmoothConfig {
            init_len: 0,
            max_len: 4,
        };
        assert!(smooth(&raw(&[1.0]), &bad).is_err());
    }

    #[test]
    fn trace_records_collapse() {
        let (_, trace) =
            smooth_traced(&raw(&[0.0, 0.0, 10.0, 0.0, 0.0]), &SmoothConfig::default()).unwrap();
        assert!(trace[2].collapsed);
        assert_eq!(trace[2].offsets, vec![0]);
        assert_eq!(trace[2].alpha(0), 1.0);
        assert_eq!(trace[2].alpha(1), 0.0);
    }

    #[test]
    fn works_in_f32() {
        let s = RawSeries::new("x", vec![2.0f32; 8]).unwrap();
        let out = smooth(&s, &SmoothConfig::default()).unwrap();
        assert!(out.values().iter().all(|&v| v == 2.0));
    }
}
