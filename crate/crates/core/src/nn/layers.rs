//! Parameter initialization and the composite layers built on [`Graph`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Activation, Binding, Graph, NnError, ParamSet, Tensor, Var};
use crate::math;
use crate::rng::{uniform, FolioRng};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Added inside `ln(1 - a²)` of the tanh change of variables.
pub const TANH_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn uniform_tensor(shape: Vec<usize>, bound: f64, rng: &mut FolioRng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = uniform(rng, -bound, bound);
    }
    t
}

/// `prefix.w` (fan_in × fan_out) uniform in ±1/√fan_in, `prefix.b` zero.
pub fn init_dense(
    params: &mut ParamSet,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut FolioRng,
) -> Result<(), NnError> {
    init_dense_with_bound(params, prefix, fan_in, fan_out, 1.0 / math::sqrt(fan_in as f64), rng)
}

pub fn init_dense_with_bound(
    params: &mut ParamSet,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    bound: f64,
    rng: &mut FolioRng,
) -> Result<(), NnError> {
    params.insert(&format!("{prefix}.w"), uniform_tensor(vec![fan_in, fan_out], bound, rng))?;
    params.insert(&format!("{prefix}.b"), Tensor::zeros(vec![fan_out]))
}

/// Stacked LSTM parameters `prefix.lstm{l}.{w_ih,w_hh,b}` with gate order
/// input, forget, candidate, output and forget bias 1.
pub fn init_lstm(
    params: &mut ParamSet,
    prefix: &str,
    input: usize,
    hidden: usize,
    layers: usize,
    rng: &mut FolioRng,
) -> Result<(), NnError> {
    for l in 0..layers {
        let fan_in = if l == 0 { input } else { hidden };
        let p = format!("{prefix}.lstm{l}");
        let w_ih = uniform_tensor(vec![fan_in, 4 * hidden], 1.0 / math::sqrt(fan_in as f64), rng);
        let w_hh = uniform_tensor(vec![hidden, 4 * hidden], 1.0 / math::sqrt(hidden as f64), rng);
        let mut b = Tensor::zeros(vec![4 * hidden]);
        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        params.insert(&format!("{p}.w_ih"), w_ih)?;
        params.insert(&format!("{p}.w_hh"), w_hh)?;
        params.insert(&format!("{p}.b"), b)?;
    }
    Ok(())
}

pub fn dense_forward(g: &mut Graph, binding: &Binding, prefix: &str, x: Var, act: Activation) -> Result<Var, NnError> {
    let w = binding.var(&format!("{prefix}.w"))?;
    let b = binding.var(&format!("{prefix}.b"))?;
    g.dense(x, w, b, act)
}

/// Runs `layers` stacked LSTMs over `steps` (each B×I) from zero state and
/// returns the top layer's final hidden state (B×H).
pub fn lstm_forward(
    g: &mut Graph,
    binding: &Binding,
    prefix: &str,
    steps: &[Var],
    layers: usize,
) -> Result<Var, NnError> {
    if steps.is_empty() || layers == 0 {
        return Err(NnError::ShapeMismatch { op: "lstm", detail: "empty sequence or no layers".into() });
    }
    let mut inputs: Vec<Var> = steps.to_vec();
    let mut last = None;
    for l in 0..layers {
        let p = format!("{prefix}.lstm{l}");
        let w_ih = binding.var(&format!("{p}.w_ih"))?;
        let w_hh = binding.var(&format!("{p}.w_hh"))?;
        let b = binding.var(&format!("{p}.b"))?;
        let hidden = g.dims(w_hh).0;
        let mut state = None;
        let mut outputs = Vec::with_capacity(inputs.len());
        for x in &inputs {
            let s = g.lstm_step(*x, state, w_ih, w_hh, b)?;
            state = Some(s);
            if l + 1 < layers {
                outputs.push(g.slice_cols(s, 0, hidden)?);
            }
        }
        let s = state.expect("non-empty sequence");
        last = Some(g.slice_cols(s, 0, hidden)?);
        inputs = outputs;
    }
    Ok(last.expect("at least one layer"))
}

/// Splits a `[B, S, I]` tensor into `S` constant `B×I` step matrices.
pub fn sequence_steps(g: &mut Graph, x: &Tensor) -> Result<Vec<Var>, NnError> {
    let &[b, s, i] = x.shape() else {
        return Err(NnError::ShapeMismatch { op: "sequence", detail: format!("{:?}", x.shape()) });
    };
    let data = x.data();
    (0..s)
        .map(|step| {
            let mut m = Vec::with_capacity(b * i);
            for r in 0..b {
                m.extend_from_slice(&data[(r * s + step) * i..(r * s + step + 1) * i]);
            }
            g.constant(b, i, m)
        })
        .collect()
}

pub fn softmax(g: &mut Graph, logits: Var) -> Var {
    g.softmax_rows(logits)
}

/// Tanh-squashed Gaussian sample `tanh(mean + exp(log_std)·noise)` for fixed
/// standard-normal `noise` (same shape as `mean`, B×K). Returns the action
/// (B×K) and its log-density (B×1), including the change-of-variables term
/// `-Σ ln(1 - a² + TANH_EPS)`. `log_std` is clamped to
/// `[LOG_STD_MIN, LOG_STD_MAX]` first.
pub fn reparam_sample(g: &mut Graph, mean: Var, log_std: Var, noise: &[f64]) -> Result<(Var, Var), NnError> {
    let (rows, cols) = g.dims(mean);
    let eps = g.constant(rows, cols, noise.to_vec())?;
    let base = g.constant(rows, cols, noise.iter().map(|e| -0.5 * e * e - HALF_LN_2PI).collect())?;
    let ls = g.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX);
    let std = g.exp(ls);
    let spread = g.mul(std, eps)?;
    let u = g.add(mean, spread)?;
    let action = g.tanh(u);
    let a2 = g.square(action);
    let neg = g.scale(a2, -1.0);
    let jac = g.add_scalar(neg, 1.0 + TANH_EPS);
    let log_jac = g.ln(jac);
    let t = g.sub(base, ls)?;
    let comp = g.sub(t, log_jac)?;
    let log_prob = g.sum_cols(comp);
    Ok((action, log_prob))
}
