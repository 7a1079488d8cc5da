#![allow(dead_code)]

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const BURST_START: usize = 400;
pub const BURST_LEN: usize = 12;

fn sine_with_noise(n: usize, phase: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, 0.03).unwrap();
    (0..n)
        .map(|i| {
            let t = (i + phase) as f64;
            0.5 * (2.0 * std::f64::consts::PI * t / 50.0).sin() + noise.sample(rng)
        })
        .collect()
}

fn write_column(path: &Path, values: &[f64]) {
    let body: String = values.iter().map(|v| format!("{v}\n")).collect();
    fs::write(path, body).unwrap();
}

/// One channel: a noisy sine for training and a test split of the same signal
/// with a 12-point level shift of +1.0 starting at `BURST_START`.
pub fn synthetic_channel(dir: &Path, id: &str, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = sine_with_noise(1200, 0, &mut rng);
    let mut test = sine_with_noise(800, 1200, &mut rng);
    for v in &mut test[BURST_START..BURST_START + BURST_LEN] {
        *v += 1.0;
    }
    write_column(&dir.join(format!("{id}_train.csv")), &train);
    write_column(&dir.join(format!("{id}_test.csv")), &test);
}

pub fn write_labels(dir: &Path, entries: &[(&str, usize, usize)]) {
    let body: Vec<String> = entries
        .iter()
        .map(|(id, s, e)| format!("\"{id}\": [[{s}, {e}]]"))
        .collect();
    fs::write(dir.join("labels.json"), format!("{{{}}}", body.join(", "))).unwrap();
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcd-telemetry"))
        .args(args)
        .env_remove("MCD_TELEMETRY_DATA")
        .output()
        .unwrap()
}
