//! Sequence-level, delay-aware evaluation.
//!
//! A labeled anomaly counts as found when some detection fires within
//! `max_delay` points of the label's start. The non-anomalous part of the
//! series is cut into segments of `max_delay` points; a segment without any
//! detection trigger is one true negative.

use serde::{Deserialize, Serialize};

use crate::detector::AnomalyInterval;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `TP + TN − FP − FN`.
    pub fn rho(&self) -> i64 {
        self.tp as i64 + self.tn as i64 - self.fp as i64 - self.fn_ as i64
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    /// Some ratio had a zero denominator and was reported as 0.
    pub zero_division: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub zero_division: bool,
}

impl MetricReport {
    pub fn new(mse: f64, counts: &ConfusionCounts) -> Self {
        let s = scalar_metrics(counts);
        Self {
            mse,
            precision: s.precision,
            recall: s.recall,
            accuracy: s.accuracy,
            f1: s.f1,
            zero_division: s.zero_division,
        }
    }
}

pub fn mse<S: Scalar>(actual: &[S], predicted: &[S]) -> Result<S> {
    if actual.len() != predicted.len() || actual.is_empty() {
        return Err(Error::Contract(format!(
            "mse needs equal non-empty inputs, got {} and {}",
            actual.len(),
            predicted.len()
        )));
    }
    let sq: S = actual
        .iter()
        .zip(predicted)
        .map(|(&y, &p)| (y - p) * (y - p))
        .sum();
    Ok(sq / S::of_usize(actual.len()))
}

fn ratio(num: usize, den: usize, zero_division: &mut bool) -> f64 {
    if den == 0 {
        *zero_division = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn scalar_metrics(counts: &ConfusionCounts) -> ClassificationScores {
    let mut zero_division = false;
    let precision = ratio(counts.tp, counts.tp + counts.fp, &mut zero_division);
    let recall = ratio(counts.tp, counts.tp + counts.fn_, &mut zero_division);
    let accuracy = ratio(counts.tp + counts.tn, counts.total(), &mut zero_division);
    if counts.total() == 0 {
        log::warn!("all confusion counts are zero; metrics reported as 0");
    }
    ClassificationScores {
        precision,
        recall,
        accuracy,
        f1: f1_score(precision, recall),
        zero_division,
    }
}

fn check_interval(iv: &AnomalyInterval, n: usize, what: &str) -> Result<()> {
    if iv.start > iv.end || iv.end >= n {
        return Err(Error::Contract(format!(
            "{what} [{}, {}] is malformed or outside [0, {n})",
            iv.start, iv.end
        )));
    }
    if iv.trigger_index < iv.start || iv.trigger_index > iv.end {
        return Err(Error::Contract(format!(
            "{what} trigger {} lies outside [{}, {}]",
            iv.trigger_index, iv.start, iv.end
        )));
    }
    Ok(())
}

pub fn confusion(
    detections: &[AnomalyInterval],
    labels: &[AnomalyInterval],
    max_delay: usize,
    n_eval_points: usize,
) -> Result<ConfusionCounts> {
    for d in detections {
        check_interval(d, n_eval_points, "detection")?;
    }
    for l in labels {
        if l.start > l.end || l.end >= n_eval_points {
            return Err(Error::Contract(format!(
                "label [{}, {}] is malformed or outside [0, {n_eval_points})",
                l.start, l.end
            )));
        }
    }

    let mut sorted_labels: Vec<&AnomalyInterval> = labels.iter().collect();
    sorted_labels.sort_by_key(|l| (l.start, l.end));
    let mut triggers: Vec<usize> = detections.iter().map(|d| d.trigger_index).collect();
    triggers.sort_unstable();

    // Label windows share one length, so earliest-available matching in label
    // order is a maximum matching.
    let mut used = vec![false; triggers.len()];
    let mut tp = 0;
    for l in &sorted_labels {
        let hi = l.start.saturating_add(max_delay);
        let first = triggers.partition_point(|&t| t < l.start);
        if let Some(k) = (first..triggers.len())
            .take_while(|&k| triggers[k] <= hi)
            .find(|&k| !used[k])
        {
            used[k] = true;
            tp += 1;
        }
    }

    let fp = detections
        .iter()
        .filter(|d| {
            !labels.iter().any(|l| {
                let overlaps = d.start <= l.end && l.start <= d.end;
                let in_window = l.start <= d.trigger_index
                    && d.trigger_index <= l.start.saturating_add(max_delay);
                overlaps || in_window
            })
        })
        .count();

    let mut anomalous = vec![false; n_eval_points];
    for l in labels {
        anomalous[l.start..=l.end].iter_mut().for_each(|a| *a = true);
    }
    let mut has_trigger = vec![false; n_eval_points];
    for &t in &triggers {
        has_trigger[t] = true;
    }
    let segment = max_delay.max(1);
    let mut tn = 0;
    let mut i = 0;
    while i < n_eval_points {
        if anomalous[i] {
            i += 1;
            continue;
        }
        let run_end = (i..n_eval_points).find(|&j| anomalous[j]).unwrap_or(n_eval_points);
        let mut s = i;
        while s < run_end {
            let e = (s + segment).min(run_end);
            if !has_trigger[s..e].iter().any(|&t| t) {
                tn += 1;
            }
            s = e;
        }
        i = run_end;
    }

    Ok(ConfusionCounts {
        tp,
        fp,
        fn_: labels.len() - tp,
        tn,
    })
}
