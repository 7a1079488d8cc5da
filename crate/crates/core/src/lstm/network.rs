use super::masks::DropoutMasks;
use super::params::{Architecture, DenseLayerParams, LstmLayerParams, ModelParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct CellState<S> {
    pub h: Vec<S>,
    pub c: Vec<S>,
}

impl<S: Scalar> CellState<S> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![S::zero(); hidden],
            c: vec![S::zero(); hidden],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Logistic,
    Identity,
}

impl Activation {
    /// Hidden dense layers squash, the output layer is linear.
    pub fn for_dense_layer(k: usize, count: usize) -> Self {
        if k + 1 == count {
            Activation::Identity
        } else {
            Activation::Logistic
        }
    }

    fn apply<S: Scalar>(self, v: S) -> S {
        match self {
            Activation::Logistic => v.logistic(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_at_output<S: Scalar>(self, y: S) -> S {
        match self {
            Activation::Logistic => y * (S::one() - y),
            Activation::Identity => S::one(),
        }
    }
}

/// Gate activations of one layer at one time step.
#[derive(Debug, Clone)]
struct StepCache<S> {
    /// `[x_t, h_{t-1}] ⊙ m`
    chi: Vec<S>,
    i: Vec<S>,
    f: Vec<S>,
    o: Vec<S>,
    /// candidate state c̃
    g: Vec<S>,
    c_prev: Vec<S>,
    c: Vec<S>,
    tanh_c: Vec<S>,
    h: Vec<S>,
}

/// Everything [`backward`] needs from one [`forward`] call.
#[derive(Debug, Clone)]
pub struct ForwardCache<S> {
    arch: Architecture,
    masks: DropoutMasks<S>,
    /// `[layer][t]`
    steps: Vec<Vec<StepCache<S>>>,
    /// Masked input of each dense layer.
    dense_inputs: Vec<Vec<S>>,
    dense_outputs: Vec<Vec<S>>,
    pub prediction: S,
}

impl<S: Scalar> ForwardCache<S> {
    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn steps(&self) -> usize {
        self.steps.first().map_or(0, |s| s.len())
    }

    /// Gate activations `(i, f, o, c̃, h)` of a layer at a time step.
    pub fn gates(&self, layer: usize, t: usize) -> (&[S], &[S], &[S], &[S], &[S]) {
        let s = &self.steps[layer][t];
        (&s.i, &s.f, &s.o, &s.g, &s.h)
    }

    /// Masked concatenated input `[x_t, h_{t-1}] ⊙ m` seen by a layer.
    pub fn masked_input(&self, layer: usize, t: usize) -> &[S] {
        &self.steps[layer][t].chi
    }
}

fn step_core<S: Scalar>(
    x: &[S],
    prev: &CellState<S>,
    p: &LstmLayerParams<S>,
    mask: &[S],
) -> StepCache<S> {
    let hidden = p.hidden();
    let chi: Vec<S> = x
        .iter()
        .chain(&prev.h)
        .zip(mask)
        .map(|(&v, &m)| v * m)
        .collect();
    let mut i = vec![S::zero(); hidden];
    let mut f = vec![S::zero(); hidden];
    let mut o = vec![S::zero(); hidden];
    let mut g = vec![S::zero(); hidden];
    p.w_i.affine_into(&chi, &p.b_i, &mut i);
    p.w_f.affine_into(&chi, &p.b_f, &mut f);
    p.w_o.affine_into(&chi, &p.b_o, &mut o);
    p.w_c.affine_into(&chi, &p.b_c, &mut g);
    let mut c = vec![S::zero(); hidden];
    let mut tanh_c = vec![S::zero(); hidden];
    let mut h = vec![S::zero(); hidden];
    for j in 0..hidden {
        i[j] = i[j].logistic();
        f[j] = f[j].logistic();
        o[j] = o[j].logistic();
        g[j] = g[j].tanh();
        c[j] = f[j] * prev.c[j] + i[j] * g[j];
        tanh_c[j] = c[j].tanh();
        h[j] = o[j] * tanh_c[j];
    }
    StepCache {
        chi,
        i,
        f,
        o,
        g,
        c_prev: prev.c.clone(),
        c,
        tanh_c,
        h,
    }
}

/// One LSTM time step with the recurrent mask applied to `[x_t, h_{t-1}]`.
pub fn lstm_step<S: Scalar>(
    x_t: &[S],
    prev: &CellState<S>,
    params: &LstmLayerParams<S>,
    mask: &[S],
) -> Result<CellState<S>> {
    let (hidden, input) = (params.hidden(), params.input_dim());
    if x_t.len() != input || prev.h.len() != hidden || prev.c.len() != hidden {
        return Err(Error::Shape(format!(
            "step expects input {input} and state {hidden}, got {} / {} / {}",
            x_t.len(),
            prev.h.len(),
            prev.c.len()
        )));
    }
    if mask.len() != input + hidden {
        return Err(Error::Shape(format!(
            "recurrent mask has length {}, expected {}",
            mask.len(),
            input + hidden
        )));
    }
    let s = step_core(x_t, prev, params, mask);
    if s.c.iter().chain(&s.h).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("LSTM state became non-finite".into()));
    }
    Ok(CellState { h: s.h, c: s.c })
}

/// `activation(M · (input ⊙ mask) + b)`.
pub fn dense_forward<S: Scalar>(
    input: &[S],
    params: &DenseLayerParams<S>,
    mask: &[S],
    activation: Activation,
) -> Result<Vec<S>> {
    if input.len() != params.weight.cols() || mask.len() != input.len() {
        return Err(Error::Shape(format!(
            "dense layer takes {} inputs, got input {} and mask {}",
            params.weight.cols(),
            input.len(),
            mask.len()
        )));
    }
    let masked: Vec<S> = input.iter().zip(mask).map(|(&v, &m)| v * m).collect();
    Ok(dense_core(&masked, params, activation))
}

fn dense_core<S: Scalar>(masked: &[S], params: &DenseLayerParams<S>, activation: Activation) -> Vec<S> {
    let mut out = vec![S::zero(); params.weight.rows()];
    params.weight.affine_into(masked, &params.bias, &mut out);
    out.iter_mut().for_each(|v| *v = activation.apply(*v));
    out
}

/// Runs the stacked LSTM over `sequence` (time-major, `input_dim` values per
/// step) and the dense head on the final hidden state.
pub fn forward<S: Scalar>(
    sequence: &[S],
    params: &ModelParams<S>,
    masks: &DropoutMasks<S>,
) -> Result<(S, ForwardCache<S>)> {
    let arch = params.architecture();
    let input_dim = arch.input_dim;
    if sequence.is_empty() || !sequence.len().is_multiple_of(input_dim) {
        return Err(Error::Shape(format!(
            "sequence of length {} is not a whole number of {input_dim}-wide steps",
            sequence.len()
        )));
    }
    if !masks.matches(&arch) {
        return Err(Error::Shape("dropout masks were sampled for another architecture".into()));
    }
    let t_len = sequence.len() / input_dim;

    let mut steps = Vec::with_capacity(params.lstm_layers.len());
    for (l, layer) in params.lstm_layers.iter().enumerate() {
        let mut state = CellState::zeros(layer.hidden());
        let mut layer_steps = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let x: &[S] = if l == 0 {
                &sequence[t * input_dim..(t + 1) * input_dim]
            } else {
                let below: &Vec<StepCache<S>> = &steps[l - 1];
                &below[t].h
            };
            let s = step_core(x, &state, layer, &masks.recurrent[l]);
            state = CellState {
                h: s.h.clone(),
                c: s.c.clone(),
            };
            layer_steps.push(s);
        }
        steps.push(layer_steps);
    }

    let d = params.dense_layers.len();
    let mut dense_inputs = Vec::with_capacity(d);
    let mut dense_outputs: Vec<Vec<S>> = Vec::with_capacity(d);
    for (k, layer) in params.dense_layers.iter().enumerate() {
        let input: &[S] = if k == 0 {
            &steps.last().unwrap()[t_len - 1].h
        } else {
            &dense_outputs[k - 1]
        };
        let masked: Vec<S> = input.iter().zip(&masks.dense[k]).map(|(&v, &m)| v * m).collect();
        let out = dense_core(&masked, layer, Activation::for_dense_layer(k, d));
        dense_inputs.push(masked);
        dense_outputs.push(out);
    }
    let prediction = dense_outputs[d - 1][0];
    if !prediction.is_finite() {
        return Err(Error::Numeric("forward pass produced a non-finite prediction".into()));
    }
    Ok((
        prediction,
        ForwardCache {
            arch,
            masks: masks.clone(),
            steps,
            dense_inputs,
            dense_outputs,
            prediction,
        },
    ))
}

/// Prediction only.
pub fn predict<S: Scalar>(sequence: &[S], params: &ModelParams<S>, masks: &DropoutMasks<S>) -> Result<S> {
    forward(sequence, params, masks).map(|(p, _)| p)
}

/// Gradient of the loss with respect to every parameter, given
/// `∂loss/∂prediction`. Masks are constants of the pass.
pub fn backward<S: Scalar>(
    params: &ModelParams<S>,
    cache: &ForwardCache<S>,
    d_loss_d_pred: S,
) -> Result<ModelParams<S>> {
    let mut grads = ModelParams::zeros(&cache.arch)?;
    backward_into(params, cache, d_loss_d_pred, &mut grads)?;
    Ok(grads)
}

/// Like [`backward`] but accumulates into `grads`.
pub fn backward_into<S: Scalar>(
    params: &ModelParams<S>,
    cache: &ForwardCache<S>,
    d_loss_d_pred: S,
    grads: &mut ModelParams<S>,
) -> Result<()> {
    if params.architecture() != cache.arch || grads.architecture() != cache.arch {
        return Err(Error::Contract(
            "forward cache does not belong to these parameters".into(),
        ));
    }
    if cache.steps.iter().any(|s| s.len() != cache.steps()) || cache.steps() == 0 {
        return Err(Error::Contract("forward cache is incomplete".into()));
    }
    if !d_loss_d_pred.is_finite() {
        return Err(Error::Numeric("upstream gradient is not finite".into()));
    }

    let d = params.dense_layers.len();
    let mut dy = vec![d_loss_d_pred];
    for k in (0..d).rev() {
        let act = Activation::for_dense_layer(k, d);
        let dpre: Vec<S> = dy
            .iter()
            .zip(&cache.dense_outputs[k])
            .map(|(&g, &y)| g * act.derivative_at_output(y))
            .collect();
        let g = &mut grads.dense_layers[k];
        g.weight.add_outer(&dpre, &cache.dense_inputs[k]);
        for (b, &v) in g.bias.iter_mut().zip(&dpre) {
            *b += v;
        }
        let mut dx = vec![S::zero(); params.dense_layers[k].weight.cols()];
        params.dense_layers[k].weight.add_transpose_mul(&dpre, &mut dx);
        for (v, &m) in dx.iter_mut().zip(&cache.masks.dense[k]) {
            *v *= m;
        }
        dy = dx;
    }

    let t_len = cache.steps();
    let top_hidden = params.lstm_layers.last().unwrap().hidden();
    let mut from_above: Vec<Vec<S>> = vec![vec![S::zero(); top_hidden]; t_len];
    from_above[t_len - 1] = dy;

    for l in (0..params.lstm_layers.len()).rev() {
        let p = &params.lstm_layers[l];
        let (hidden, input) = (p.hidden(), p.input_dim());
        let mask = &cache.masks.recurrent[l];
        let g = &mut grads.lstm_layers[l];
        let mut dh_next = vec![S::zero(); hidden];
        let mut dc_next = vec![S::zero(); hidden];
        let mut below = vec![vec![S::zero(); input]; t_len];
        let mut da_i = vec![S::zero(); hidden];
        let mut da_f = vec![S::zero(); hidden];
        let mut da_o = vec![S::zero(); hidden];
        let mut da_g = vec![S::zero(); hidden];

        for t in (0..t_len).rev() {
            let s = &cache.steps[l][t];
            for j in 0..hidden {
                let dh = from_above[t][j] + dh_next[j];
                let dc = dc_next[j] + dh * s.o[j] * (S::one() - s.tanh_c[j] * s.tanh_c[j]);
                let d_o = dh * s.tanh_c[j];
                let d_i = dc * s.g[j];
                let d_g = dc * s.i[j];
                let d_f = dc * s.c_prev[j];
                dc_next[j] = dc * s.f[j];
                da_i[j] = d_i * s.i[j] * (S::one() - s.i[j]);
                da_f[j] = d_f * s.f[j] * (S::one() - s.f[j]);
                da_o[j] = d_o * s.o[j] * (S::one() - s.o[j]);
                da_g[j] = d_g * (S::one() - s.g[j] * s.g[j]);
            }
            g.w_i.add_outer(&da_i, &s.chi);
            g.w_f.add_outer(&da_f, &s.chi);
            g.w_o.add_outer(&da_o, &s.chi);
            g.w_c.add_outer(&da_g, &s.chi);
            for j in 0..hidden {
                g.b_i[j] += da_i[j];
                g.b_f[j] += da_f[j];
                g.b_o[j] += da_o[j];
                g.b_c[j] += da_g[j];
            }
            let mut dchi = vec![S::zero(); input + hidden];
            p.w_i.add_transpose_mul(&da_i, &mut dchi);
            p.w_f.add_transpose_mul(&da_f, &mut dchi);
            p.w_o.add_transpose_mul(&da_o, &mut dchi);
            p.w_c.add_transpose_mul(&da_g, &mut dchi);
            for (v, &m) in dchi.iter_mut().zip(mask) {
                *v *= m;
            }
            below[t].copy_from_slice(&dchi[..input]);
            dh_next.copy_from_slice(&dchi[input..]);
        }
        from_above = below;
    }
    Ok(())
}
