use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = S::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = self · x + bias`.
    pub(crate) fn affine_into(&self, x: &[S], bias: &[S], out: &mut [S]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = S::zero();
            for (&w, &v) in row.iter().zip(x) {
                acc += w * v;
            }
            *o = acc + bias[r];
        }
    }

    /// `out += selfᵀ · dy`.
    pub(crate) fn add_transpose_mul(&self, dy: &[S], out: &mut [S]) {
        for (r, &g) in dy.iter().enumerate() {
            if g == S::zero() {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * g;
            }
        }
    }

    /// `self += dy · xᵀ`.
    pub(crate) fn add_outer(&mut self, dy: &[S], x: &[S]) {
        for (r, &g) in dy.iter().enumerate() {
            if g == S::zero() {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, &v) in row.iter_mut().zip(x) {
                *w += g * v;
            }
        }
    }
}

/// Layer sizes of the forecaster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    /// Features per time step (1 for univariate telemetry).
    pub input_dim: usize,
    /// Hidden size of each stacked LSTM layer, bottom first.
    pub lstm_hidden: Vec<usize>,
    /// Output size of each dense layer; the last one is the forecast horizon.
    pub dense_units: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_dim: 1,
            lstm_hidden: vec![64, 64, 64],
            dense_units: vec![32, 1],
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Shape("input_dim must be positive".into()));
        }
        if self.lstm_hidden.is_empty() || self.dense_units.is_empty() {
            return Err(Error::Shape(
                "need at least one LSTM layer and one dense layer".into(),
            ));
        }
        if self.lstm_hidden.iter().chain(&self.dense_units).any(|&u| u == 0) {
            return Err(Error::Shape("layer sizes must be positive".into()));
        }
        if *self.dense_units.last().unwrap() != 1 {
            return Err(Error::Shape("final dense layer must have a single output".into()));
        }
        Ok(())
    }

    /// Input width of LSTM layer `l`.
    pub fn lstm_input(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.lstm_hidden[l - 1]
        }
    }

    /// Input width of dense layer `k`.
    pub fn dense_input(&self, k: usize) -> usize {
        if k == 0 {
            *self.lstm_hidden.last().unwrap()
        } else {
            self.dense_units[k - 1]
        }
    }
}

/// Gate weights of one LSTM layer. Every matrix maps `[x_t, h_{t-1}]`
/// (length `input_dim + hidden`) to `hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams<S> {
    pub w_i: Matrix<S>,
    pub w_f: Matrix<S>,
    pub w_o: Matrix<S>,
    pub w_c: Matrix<S>,
    pub b_i: Vec<S>,
    pub b_f: Vec<S>,
    pub b_o: Vec<S>,
    pub b_c: Vec<S>,
}

impl<S: Scalar> LstmLayerParams<S> {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let cols = input_dim + hidden;
        Self {
            w_i: Matrix::zeros(hidden, cols),
            w_f: Matrix::zeros(hidden, cols),
            w_o: Matrix::zeros(hidden, cols),
            w_c: Matrix::zeros(hidden, cols),
            b_i: vec![S::zero(); hidden],
            b_f: vec![S::zero(); hidden],
            b_o: vec![S::zero(); hidden],
            b_c: vec![S::zero(); hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_i.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_i.cols() - self.w_i.rows()
    }

    fn check(&self) -> Result<()> {
        let (h, c) = (self.w_i.rows(), self.w_i.cols());
        if c < h {
            return Err(Error::Shape("LSTM weight has fewer columns than rows".into()));
        }
        for m in [&self.w_f, &self.w_o, &self.w_c] {
            if m.rows() != h || m.cols() != c {
                return Err(Error::Shape("LSTM gate matrices disagree in shape".into()));
            }
        }
        for b in [&self.b_i, &self.b_f, &self.b_o, &self.b_c] {
            if b.len() != h {
                return Err(Error::Shape("LSTM bias length differs from hidden size".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayerParams<S> {
    /// `out × in`.
    pub weight: Matrix<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> DenseLayerParams<S> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![S::zero(); output],
        }
    }
}

/// Every trainable tensor of the network. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    pub lstm_layers: Vec<LstmLayerParams<S>>,
    pub dense_layers: Vec<DenseLayerParams<S>>,
}

/// Borrowed view of one parameter tensor.
pub struct TensorRef<'a, S> {
    pub name: String,
    pub values: &'a [S],
    pub is_weight: bool,
}

pub struct TensorMut<'a, S> {
    pub name: String,
    pub values: &'a mut [S],
    pub is_weight: bool,
}

impl<S: Scalar> ModelParams<S> {
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let lstm_layers = arch
            .lstm_hidden
            .iter()
            .enumerate()
            .map(|(l, &h)| LstmLayerParams::zeros(arch.lstm_input(l), h))
            .collect();
        let dense_layers = arch
            .dense_units
            .iter()
            .enumerate()
            .map(|(k, &out)| DenseLayerParams::zeros(arch.dense_input(k), out))
            .collect();
        Ok(Self {
            lstm_layers,
            dense_layers,
        })
    }

    /// Xavier-uniform weights, zero biases, forget-gate bias 1.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        for layer in &mut p.lstm_layers {
            for m in [&mut layer.w_i, &mut layer.w_f, &mut layer.w_o, &mut layer.w_c] {
                xavier(m, rng);
            }
            layer.b_f.iter_mut().for_each(|b| *b = S::one());
        }
        for layer in &mut p.dense_layers {
            xavier(&mut layer.weight, rng);
        }
        Ok(p)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.lstm_layers.first().map_or(0, |l| l.input_dim()),
            lstm_hidden: self.lstm_layers.iter().map(|l| l.hidden()).collect(),
            dense_units: self.dense_layers.iter().map(|d| d.weight.rows()).collect(),
        }
    }

    /// Checks that the layer shapes chain together.
    pub fn validate(&self) -> Result<()> {
        let arch = self.architecture();
        arch.validate()?;
        for (l, layer) in self.lstm_layers.iter().enumerate() {
            layer.check()?;
            if layer.input_dim() != arch.lstm_input(l) {
                return Err(Error::Shape(format!("LSTM layer {l} input width does not chain")));
            }
        }
        for (k, layer) in self.dense_layers.iter().enumerate() {
            if layer.weight.cols() != arch.dense_input(k) || layer.bias.len() != layer.weight.rows() {
                return Err(Error::Shape(format!("dense layer {k} does not chain")));
            }
        }
        if self.tensors().iter().any(|t| t.values.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric("parameters contain non-finite values".into()));
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_, S>> {
        let mut out = Vec::new();
        for (l, p) in self.lstm_layers.iter().enumerate() {
            for (g, m) in [("i", &p.w_i), ("f", &p.w_f), ("o", &p.w_o), ("c", &p.w_c)] {
                out.push(TensorRef {
                    name: format!("lstm{l}.w_{g}"),
                    values: m.as_slice(),
                    is_weight: true,
                });
            }
            for (g, b) in [("i", &p.b_i), ("f", &p.b_f), ("o", &p.b_o), ("c", &p.b_c)] {
                out.push(TensorRef {
                    name: format!("lstm{l}.b_{g}"),
                    values: b,
                    is_weight: false,
                });
            }
        }
        for (k, d) in self.dense_layers.iter().enumerate() {
            out.push(TensorRef {
                name: format!("dense{k}.weight"),
                values: d.weight.as_slice(),
                is_weight: true,
            });
            out.push(TensorRef {
                name: format!("dense{k}.bias"),
                values: &d.bias,
                is_weight: false,
            });
        }
        out
    }

    /// Mutable views in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_, S>> {
        let mut out = Vec::new();
        for (l, p) in self.lstm_layers.iter_mut().enumerate() {
            let LstmLayerParams {
                w_i,
                w_f,
                w_o,
                w_c,
                b_i,
                b_f,
                b_o,
                b_c,
            } = p;
            for (g, m) in [("i", w_i), ("f", w_f), ("o", w_o), ("c", w_c)] {
                out.push(TensorMut {
                    name: format!("lstm{l}.w_{g}"),
                    values: m.as_mut_slice(),
                    is_weight: true,
                });
            }
            for (g, b) in [("i", b_i), ("f", b_f), ("o", b_o), ("c", b_c)] {
                out.push(TensorMut {
                    name: format!("lstm{l}.b_{g}"),
                    values: b.as_mut_slice(),
                    is_weight: false,
                });
            }
        }
        for (k, d) in self.dense_layers.iter_mut().enumerate() {
            out.push(TensorMut {
                name: format!("dense{k}.weight"),
                values: d.weight.as_mut_slice(),
                is_weight: true,
            });
            out.push(TensorMut {
                name: format!("dense{k}.bias"),
                values: d.bias.as_mut_slice(),
                is_weight: false,
            });
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.values.len()).sum()
    }

    /// Sum of squared weight-matrix entries; biases are excluded.
    pub fn weight_sq_norm(&self) -> S {
        self.tensors()
            .iter()
            .filter(|t| t.is_weight)
            .flat_map(|t| t.values.iter())
            .map(|&v| v * v)
            .sum()
    }

    pub fn fill(&mut self, value: S) {
        for t in self.tensors_mut() {
            t.values.iter_mut().for_each(|v| *v = value);
        }
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, &s) in dst.values.iter_mut().zip(src.values) {
                *d += s;
            }
        }
    }
}

fn xavier<S: Scalar, R: Rng + ?Sized>(m: &mut Matrix<S>, rng: &mut R) {
    let limit = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
    for w in m.as_mut_slice() {
        *w = S::of(rng.gen_range(-limit..limit));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_shapes_chain() {
        let arch = Architecture::default();
        let p = ModelParams::<f64>::init(&arch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        p.validate().unwrap();
        assert_eq!(p.architecture(), arch);
        assert_eq!(p.lstm_layers[0].w_i.cols(), 65);
        assert_eq!(p.lstm_layers[1].w_i.cols(), 128);
        assert_eq!(p.dense_layers[0].weight.cols(), 64);
        // 4·64·65 + 256 + 2·(4·64·128 + 256) + 64·32 + 32 + 32 + 1
        assert_eq!(p.param_count(), 85_057);
    }

    #[test]
    fn init_biases() {
        let arch = Architecture {
            input_dim: 1,
            lstm_hidden: vec![3],
            dense_units: vec![1],
        };
        let p = ModelParams::<f64>::init(&arch, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(p.lstm_layers[0].b_f.iter().all(|&b| b == 1.0));
        assert!(p.lstm_layers[0].b_i.iter().all(|&b| b == 0.0));
        let limit = (6.0f64 / 7.0).sqrt();
        assert!(p.lstm_layers[0].w_c.as_slice().iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn rejects_multi_output() {
        let arch = Architecture {
            input_dim: 1,
            lstm_hidden: vec![2],
            dense_units: vec![2],
        };
        assert!(ModelParams::<f64>::zeros(&arch).is_err());
    }

    #[test]
    fn matrix_ops() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut out = [0.0; 2];
        m.affine_into(&[1.0, 0.0, -1.0], &[0.5, 0.0], &mut out);
        assert_eq!(out, [-1.5, -2.0]);
        let mut back = [0.0; 3];
        m.add_transpose_mul(&[1.0, 1.0], &mut back);
        assert_eq!(back, [5.0, 7.0, 9.0]);
        assert!(Matrix::<f64>::from_vec(2, 2, vec![1.0]).is_err());
    }
}
