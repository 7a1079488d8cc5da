//! Post-processing of out-of-band points into anomaly intervals.
//!
//! A window of `n_max` consecutive forecasts triggers when at least
//! `⌈0.8·n_max⌉` of them lie outside the confidence band. The anomaly starts at
//! the first outside point of the first triggering window; overlapping or
//! touching triggered ranges merge into one interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcinfer::ForecastDistribution;
use crate::metrics::{confusion, ConfusionCounts};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnomalyInterval {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    /// Point at which the alert fires.
    pub trigger_index: usize,
}

impl AnomalyInterval {
    /// A ground-truth interval; its trigger is its start.
    pub fn label(start: usize, end: usize) -> Self {
        Self {
            start,
            end,
            trigger_index: start,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutsideFlags {
    pub flags: Vec<bool>,
}

impl OutsideFlags {
    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

impl From<Vec<bool>> for OutsideFlags {
    fn from(flags: Vec<bool>) -> Self {
        Self { flags }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerRule {
    /// At least `⌈0.8·n_max⌉` outside points anywhere within an `n_max` window.
    #[default]
    Density,
    /// An unbroken run of `⌈0.8·n_max⌉` outside points.
    Consecutive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Flagged {
    pub intervals: Vec<AnomalyInterval>,
    /// Set when the window is longer than the series and nothing could trigger.
    pub window_exceeds_series: bool,
}

/// `⌈0.8·n⌉` in integer arithmetic.
pub fn required_outside(n_max: usize) -> usize {
    (4 * n_max).div_ceil(5)
}

/// Points strictly outside `[lower, upper]`.
pub fn mark_outside<S: Scalar>(dist: &ForecastDistribution<S>, actual: &[S]) -> Result<OutsideFlags> {
    if actual.len() != dist.len() {
        return Err(Error::Contract(format!(
            "{} actual values for {} forecasts",
            actual.len(),
            dist.len()
        )));
    }
    outside_band(actual, &dist.lower, &dist.upper)
}

/// Same as [`mark_outside`] for bounds read back from a forecast file.
pub fn outside_band<S: Scalar>(actual: &[S], lower: &[S], upper: &[S]) -> Result<OutsideFlags> {
    if actual.len() != lower.len() || actual.len() != upper.len() {
        return Err(Error::Contract("actual values and bounds differ in length".into()));
    }
    let flags = actual
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(&a, (&lo, &hi))| a < lo || a > hi)
        .collect();
    Ok(OutsideFlags { flags })
}

pub fn flag_anomalies(flags: &OutsideFlags, n_max: usize) -> Result<Flagged> {
    flag_anomalies_with(flags, n_max, TriggerRule::Density)
}

pub fn flag_anomalies_with(flags: &OutsideFlags, n_max: usize, rule: TriggerRule) -> Result<Flagged> {
    if n_max == 0 {
        return Err(Error::Precondition("n_max must be at least 1".into()));
    }
    let n = flags.len();
    if n_max > n {
        log::warn!("n_max {n_max} exceeds the {n} available points; nothing can trigger");
        return Ok(Flagged {
            intervals: Vec::new(),
            window_exceeds_series: true,
        });
    }
    let need = required_outside(n_max);
    let intervals = match rule {
        TriggerRule::Density => density_scan(&flags.flags, n_max, need),
        TriggerRule::Consecutive => run_scan(&flags.flags, need),
    };
    Ok(Flagged {
        intervals,
        window_exceeds_series: false,
    })
}

fn density_scan(flags: &[bool], n_max: usize, need: usize) -> Vec<AnomalyInterval> {
    let outside: Vec<usize> = flags
        .iter()
        .enumerate()
        .filter_map(|(i, &f)| f.then_some(i))
        .collect();
    // rank[i] = outside points before index i
    let mut rank = Vec::with_capacity(flags.len() + 1);
    rank.push(0usize);
    for &f in flags {
        rank.push(rank.last().unwrap() + f as usize);
    }

    let mut out: Vec<AnomalyInterval> = Vec::new();
    for j in 0..=flags.len() - n_max {
        let (lo, hi) = (rank[j], rank[j + n_max]);
        if hi - lo < need {
            continue;
        }
        let candidate = AnomalyInterval {
            start: outside[lo],
            end: outside[hi - 1],
            trigger_index: outside[lo + need - 1],
        };
        match out.last_mut() {
            Some(cur) if candidate.start <= cur.end + 1 => {
                cur.end = cur.end.max(candidate.end);
            }
            _ => out.push(candidate),
        }
    }
    out
}

fn run_scan(flags: &[bool], need: usize) -> Vec<AnomalyInterval> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < flags.len() {
        if !flags[i] {
            i += 1;
            continue;
        }
        let end = (i..flags.len()).find(|&j| !flags[j]).unwrap_or(flags.len());
        if end - i >= need {
            out.push(AnomalyInterval {
                start: i,
                end: end - 1,
                trigger_index: i + need - 1,
            });
        }
        i = end;
    }
    out
}

/// Score of every candidate window length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmaxSweepResult {
    pub candidates: Vec<usize>,
    pub rho: Vec<i64>,
    pub counts: Vec<ConfusionCounts>,
    pub n_opt: usize,
}

impl NmaxSweepResult {
    pub fn best_counts(&self) -> ConfusionCounts {
        let k = self.candidates.iter().position(|&c| c == self.n_opt).unwrap();
        self.counts[k]
    }
}

pub const DEFAULT_CANDIDATES: [usize; 9] = [2, 4, 6, 8, 10, 12, 16, 24, 32];

/// Grid search over `n_max` maximizing `TP + TN − FP − FN`; ties go to the
/// smallest candidate.
pub fn sweep_nmax(
    flags: &OutsideFlags,
    labels: &[AnomalyInterval],
    candidates: &[usize],
    max_delay: usize,
) -> Result<NmaxSweepResult> {
    sweep_nmax_with(flags, labels, candidates, max_delay, TriggerRule::Density)
}

pub fn sweep_nmax_with(
    flags: &OutsideFlags,
    labels: &[AnomalyInterval],
    candidates: &[usize],
    max_delay: usize,
    rule: TriggerRule,
) -> Result<NmaxSweepResult> {
    if candidates.is_empty() {
        return Err(Error::Precondition("no n_max candidates given".into()));
    }
    let mut counts = Vec::with_capacity(candidates.len());
    for &n in candidates {
        let found = flag_anomalies_with(flags, n, rule)?;
        counts.push(confusion(&found.intervals, labels, max_delay, flags.len())?);
    }
    let rho: Vec<i64> = counts.iter().map(|c| c.rho()).collect();
    let n_opt = candidates
        .iter()
        .zip(&rho)
        .fold(None::<(usize, i64)>, |best, (&c, &r)| match best {
            Some((bc, br)) if br > r || (br == r && bc <= c) => Some((bc, br)),
            _ => Some((c, r)),
        })
        .map(|(c, _)| c)
        .unwrap();
    Ok(NmaxSweepResult {
        candidates: candidates.to_vec(),
        rho,
        counts,
        n_opt,
    })
}
