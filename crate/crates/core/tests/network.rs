mod oracles;

use mcd_telemetry::lstm::{
    backward, forward, lstm_step, Architecture, CellState, DropoutMasks, LstmLayerParams, Matrix,
};
use oracles::{max_gradient_error, perturbed_params, random_arch};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn analytic_gradients_match_central_differences() {
    let started = std::time::Instant::now();
    let (worst, at) = max_gradient_error(2024, 20, 1e-5);
    println!("max relative error {worst:.3e}");
    assert!(worst < 1e-4, "{at}: rel {worst}");
    assert!(started.elapsed().as_secs_f64() < 10.0);
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn step_matches_hand_evaluated_gates() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (hid, inp) = (2, 1);
    let mut layer = LstmLayerParams::<f64>::zeros(inp, hid);
    let mut rand_mat = || Matrix::from_vec(hid, inp + hid, (0..hid * (inp + hid)).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    layer.w_i = rand_mat();
    layer.w_f = rand_mat();
    layer.w_o = rand_mat();
    layer.w_c = rand_mat();
    layer.b_i = vec![0.1, -0.2];
    layer.b_f = vec![1.0, 0.5];
    layer.b_o = vec![-0.3, 0.0];
    layer.b_c = vec![0.05, 0.2];
    let prev = CellState {
        h: vec![0.3, -0.6],
        c: vec![0.7, -1.1],
    };
    let mask = [1.25, 0.0, 1.25];
    let x = [0.9];
    let chi: Vec<f64> = [x[0], prev.h[0], prev.h[1]].iter().zip(&mask).map(|(a, b)| a * b).collect();
    let row = |m: &Matrix<f64>, r: usize| (0..3).map(|c| m.get(r, c) * chi[c]).sum::<f64>();
    let mut want_c = [0.0; 2];
    let mut want_h = [0.0; 2];
    for j in 0..2 {
        let i = sigmoid(row(&layer.w_i, j) + layer.b_i[j]);
        let f = sigmoid(row(&layer.w_f, j) + layer.b_f[j]);
        let o = sigmoid(row(&layer.w_o, j) + layer.b_o[j]);
        let g = (row(&layer.w_c, j) + layer.b_c[j]).tanh();
        want_c[j] = f * prev.c[j] + i * g;
        want_h[j] = o * want_c[j].tanh();
    }
    let got = lstm_step(&x, &prev, &layer, &mask).unwrap();
    for j in 0..2 {
        assert!((got.c[j] - want_c[j]).abs() < 1e-14);
        assert!((got.h[j] - want_h[j]).abs() < 1e-14);
    }
    assert!(lstm_step(&x, &prev, &layer, &mask[..2]).is_err());
}

#[test]
fn mask_zero_fraction_concentrates() {
    let arch = Architecture::default();
    let mut zeros = 0usize;
    let mut total = 0usize;
    let mut seed = 0;
    while total < 100_000 {
        let m = DropoutMasks::<f64>::sample(&arch, 0.5, seed).unwrap();
        for v in m.recurrent.iter().chain(&m.dense).flatten() {
            zeros += (*v == 0.0) as usize;
            total += 1;
        }
        seed += 1;
    }
    let frac = zeros as f64 / total as f64;
    assert!((frac - 0.5).abs() < 0.01, "zero fraction {frac}");
}

#[test]
fn inverted_dropout_preserves_expectation() {
    let arch = Architecture {
        input_dim: 1,
        lstm_hidden: vec![3],
        dense_units: vec![1],
    };
    let x = [0.8, -1.5, 2.0, 0.4];
    let mut sums = [0.0; 4];
    let draws = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..draws {
        let m = DropoutMasks::<f64>::sample_with(&arch, 0.2, &mut rng).unwrap();
        for j in 0..4 {
            sums[j] += x[j] * m.recurrent[0][j];
        }
    }
    for j in 0..4 {
        let mean = sums[j] / draws as f64;
        assert!((mean - x[j]).abs() <= 0.01 * x[j].abs(), "coordinate {j}: {mean} vs {}", x[j]);
    }
}

#[test]
fn masks_are_deterministic_and_edge_cases_hold() {
    let arch = Architecture::default();
    let a = DropoutMasks::<f64>::sample(&arch, 0.2, 11).unwrap();
    assert_eq!(a, DropoutMasks::sample(&arch, 0.2, 11).unwrap());
    assert_ne!(a, DropoutMasks::sample(&arch, 0.2, 12).unwrap());
    let none = DropoutMasks::<f64>::sample(&arch, 0.0, 3).unwrap();
    assert!(none.recurrent.iter().chain(&none.dense).flatten().all(|&v| v == 1.0));
    let all = DropoutMasks::<f64>::sample(&arch, 1.0, 3).unwrap();
    assert!(all.degenerate && all.zero_fraction() == 1.0);
    assert!(DropoutMasks::<f64>::sample(&arch, 1.5, 3).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn gates_stay_in_range_and_mask_is_constant(
        seed in 0u64..10_000,
        seq in prop::collection::vec(-20.0..20.0f64, 1..8),
        p in 0.0..0.9f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = random_arch(&mut rng);
        let params = perturbed_params(&arch, &mut rng);
        let masks = DropoutMasks::sample(&arch, p, seed).unwrap();
        let (_, cache) = forward(&seq, &params, &masks).unwrap();
        for l in 0..arch.lstm_hidden.len() {
            for t in 0..cache.steps() {
                let (i, f, o, g, h) = cache.gates(l, t);
                prop_assert!(i.iter().chain(f).chain(o).all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert!(g.iter().chain(h).all(|&v| (-1.0..=1.0).contains(&v)));
                // χ_t ⊙ m with the same m at every t
                let x: Vec<f64> = if l == 0 { vec![seq[t]] } else { cache.gates(l - 1, t).4.to_vec() };
                let h_prev: Vec<f64> = if t == 0 { vec![0.0; h.len()] } else { cache.gates(l, t - 1).4.to_vec() };
                let chi: Vec<f64> = x.into_iter().chain(h_prev).collect();
                let want: Vec<f64> = chi.iter().zip(&masks.recurrent[l]).map(|(a, b)| a * b).collect();
                prop_assert_eq!(cache.masked_input(l, t), &want[..]);
            }
        }
    }

    #[test]
    fn prediction_is_a_function_of_params_sequence_and_seed(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = random_arch(&mut rng);
        let params = perturbed_params(&arch, &mut rng);
        let seq = [0.2, -0.4, 0.9];
        let run = || {
            let m = DropoutMasks::sample(&arch, 0.2, seed).unwrap();
            let (p, c) = forward(&seq, &params, &m).unwrap();
            (p, backward(&params, &c, 1.0).unwrap())
        };
        prop_assert_eq!(run(), run());
    }
}
