//! Independent reference implementations shared by the integration tests and
//! the acceptance suite. Nothing here calls into the library's own helpers
//! except for the forward pass used as the function under differentiation.
#![allow(dead_code)]

use mcd_telemetry::lstm::{backward, forward, Architecture, DropoutMasks, ModelParams};
use mcd_telemetry::{AnomalyInterval, ConfusionCounts};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-line reading of the adaptive window filter, kept free of any
/// helper from the library.
pub fn smooth_oracle(u: &[f64], init_len: usize, max_len: usize) -> Vec<f64> {
    let n = u.len();
    let jump = |j: usize| (u[j - 1] - u[j]).abs();
    let half = (max_len / 2) as isize;
    let mut ref_len = init_len;
    let mut out = vec![0.0; n];
    for k in 0..n {
        let first = if k > ref_len { k - ref_len } else { 1 };
        let mut refs = Vec::new();
        let mut j = first;
        while j < k {
            refs.push(jump(j));
            j += 1;
        }
        if refs.is_empty() {
            out[k] = u[k];
            ref_len = init_len;
            continue;
        }
        let mut m = 0.0;
        for &d in &refs {
            m += d;
        }
        m /= refs.len() as f64;
        let mut v = 0.0;
        for &d in &refs {
            v += (d - m) * (d - m);
        }
        v /= refs.len() as f64;
        let th = m + 2.0 * v.sqrt();
        if jump(k) > th {
            out[k] = u[k];
            ref_len = init_len;
            continue;
        }
        let mut acc = u[k];
        let mut count = 1usize;
        let mut r = 1isize;
        let mut stop = false;
        while r <= half && !stop {
            let past = k as isize - r;
            let future = k as isize + r;
            if past < 0 && future >= n as isize {
                break;
            }
            for idx in [past, future] {
                if idx < 0 || idx >= n as isize {
                    continue;
                }
                let idx = idx as usize;
                if idx > 0 && jump(idx) > th {
                    stop = true;
                    break;
                }
                acc += u[idx];
                count += 1;
            }
            r += 1;
        }
        out[k] = acc / count as f64;
        ref_len = count.max(init_len).min(max_len);
    }
    out
}

/// Enumerates every window, marks the span between its first and last outside
/// point whenever it holds enough of them, and reads intervals off the union.
pub fn window_oracle(flags: &[bool], n_max: usize) -> Vec<AnomalyInterval> {
    let n = flags.len();
    if n_max > n {
        return vec![];
    }
    let need = (1..=n_max).find(|&c| 5 * c >= 4 * n_max).unwrap();
    let mut covered = vec![false; n];
    let mut trigger_at = vec![usize::MAX; n];
    for j in 0..=n - n_max {
        let inside: Vec<usize> = (j..j + n_max).filter(|&i| flags[i]).collect();
        if inside.len() < need {
            continue;
        }
        let (a, b) = (inside[0], *inside.last().unwrap());
        for c in a..=b {
            covered[c] = true;
            trigger_at[c] = trigger_at[c].min(inside[need - 1]);
        }
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if !covered[i] {
            i += 1;
            continue;
        }
        let mut e = i;
        while e + 1 < n && covered[e + 1] {
            e += 1;
        }
        let trigger = (i..=e).map(|c| trigger_at[c]).min().unwrap();
        out.push(AnomalyInterval {
            start: i,
            end: e,
            trigger_index: trigger,
        });
        i = e + 1;
    }
    out
}

pub fn random_flags(rng: &mut ChaCha8Rng) -> Vec<bool> {
    let n = rng.gen_range(1..=512);
    // alternate calm and bursty stretches so triggers actually occur
    let mut flags = Vec::with_capacity(n);
    while flags.len() < n {
        let p = if rng.gen_bool(0.3) { 0.9 } else { 0.1 };
        let run = rng.gen_range(1..40);
        for _ in 0..run {
            flags.push(rng.gen_bool(p));
        }
    }
    flags.truncate(n);
    flags
}

/// Counts straight from the definitions.
pub fn direct_counts(dets: &[AnomalyInterval], labels: &[AnomalyInterval], delay: usize, n: usize) -> ConfusionCounts {
    let tp = best_matching(dets, labels, delay, 0, &mut vec![false; dets.len()]);
    let fp = dets
        .iter()
        .filter(|d| {
            labels.iter().all(|l| {
                let overlap = (d.start..=d.end).any(|i| (l.start..=l.end).contains(&i));
                let timely = (l.start..=l.start + delay).contains(&d.trigger_index);
                !overlap && !timely
            })
        })
        .count();
    let normal = |i: usize| labels.iter().all(|l| i < l.start || i > l.end);
    let seg = delay.max(1);
    let mut tn = 0;
    let mut run_start = None;
    let mut seg_has_trigger = false;
    for i in 0..=n {
        let is_normal = i < n && normal(i);
        if let Some(s) = run_start {
            let boundary = !is_normal || (i - s) % seg == 0;
            if boundary {
                tn += !seg_has_trigger as usize;
                seg_has_trigger = false;
            }
            if !is_normal {
                run_start = None;
            }
        }
        if is_normal {
            if run_start.is_none() {
                run_start = Some(i);
            }
            seg_has_trigger |= dets.iter().any(|d| d.trigger_index == i);
        }
    }
    ConfusionCounts {
        tp,
        fp,
        fn_: labels.len() - tp,
        tn,
    }
}

/// Largest number of labels that can each be credited by a distinct timely detection.
pub fn best_matching(dets: &[AnomalyInterval], labels: &[AnomalyInterval], delay: usize, li: usize, used: &mut Vec<bool>) -> usize {
    if li == labels.len() {
        return 0;
    }
    let mut best = best_matching(dets, labels, delay, li + 1, used);
    let l = labels[li];
    for d in 0..dets.len() {
        let t = dets[d].trigger_index;
        if !used[d] && l.start <= t && t <= l.start + delay {
            used[d] = true;
            best = best.max(1 + best_matching(dets, labels, delay, li + 1, used));
            used[d] = false;
        }
    }
    best
}

pub fn random_interval(rng: &mut ChaCha8Rng, n: usize) -> AnomalyInterval {
    let s = rng.gen_range(0..n);
    let e = rng.gen_range(s..(s + 15).min(n));
    AnomalyInterval {
        start: s,
        end: e,
        trigger_index: rng.gen_range(s..=e),
    }
}


pub fn random_arch(rng: &mut ChaCha8Rng) -> Architecture {
    let layers = rng.gen_range(1..=3);
    let dense = if rng.gen_bool(0.5) {
        vec![1]
    } else {
        vec![rng.gen_range(1..=3), 1]
    };
    Architecture {
        input_dim: 1,
        lstm_hidden: (0..layers).map(|_| rng.gen_range(1..=4)).collect(),
        dense_units: dense,
    }
}

pub fn perturbed_params(arch: &Architecture, rng: &mut ChaCha8Rng) -> ModelParams<f64> {
    let mut p = ModelParams::init(arch, rng).unwrap();
    for t in p.tensors_mut() {
        for v in t.values.iter_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
    }
    p
}

pub fn half_sq_loss(seq: &[f64], y: f64, p: &ModelParams<f64>, m: &DropoutMasks<f64>) -> f64 {
    let (pred, _) = forward(seq, p, m).unwrap();
    0.5 * (pred - y) * (pred - y)
}

/// Worst relative error between backpropagated and central-difference
/// gradients over `cases` random small networks, with the offending entry.
pub fn max_gradient_error(seed: u64, cases: u64, h: f64) -> (f64, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0f64, String::new());
    for case in 0..cases {
        let arch = random_arch(&mut rng);
        let params = perturbed_params(&arch, &mut rng);
        let t_len = rng.gen_range(1..=3);
        let seq: Vec<f64> = (0..t_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = rng.gen_range(-1.0..1.0);
        let masks = DropoutMasks::sample(&arch, 0.3, case).unwrap();

        let (pred, cache) = forward(&seq, &params, &masks).unwrap();
        let grads = backward(&params, &cache, pred - y).unwrap();

        let names: Vec<String> = params.tensors().into_iter().map(|t| t.name).collect();
        let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|t| t.values.to_vec()).collect();
        for (ti, name) in names.iter().enumerate() {
            for e in 0..analytic[ti].len() {
                let shifted = |delta: f64| {
                    let mut q = params.clone();
                    q.tensors_mut()[ti].values[e] += delta;
                    half_sq_loss(&seq, y, &q, &masks)
                };
                let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
                let a = analytic[ti][e];
                // floor keeps roundoff in near-zero entries from dominating
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                if rel > worst.0 {
                    worst = (rel, format!("case {case} {arch:?} {name}[{e}]: analytic {a} numeric {numeric}"));
                }
            }
        }
    }
    worst
}
