//! Feature extractor and head builders shared by the learning agents.
//!
//! Every asset's window runs through the same extractor: a tanh dense
//! projection of the five channels at each step, then stacked LSTMs. The
//! last hidden states of all assets are concatenated (cash first, as a zero
//! vector) into a `B × slots·H` feature matrix.

use alloc::format;
use alloc::vec::Vec;

use super::AgentError;
use crate::data::{FeatureWindow, CHANNELS};
use crate::env::WeightVector;
use crate::nn::{
    dense_forward, init_dense, init_dense_with_bound, init_lstm, lstm_forward, Activation, Binding, Graph, NnError,
    ParamSet, Var,
};
use crate::rng::FolioRng;

/// Init range of output layers, small so fresh policies start near uniform.
pub const HEAD_INIT_BOUND: f64 = 3e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    /// Risky assets in the frame.
    pub assets: usize,
    pub include_cash: bool,
    /// Steps per window, `W − 1`.
    pub window_steps: usize,
    pub hidden: usize,
    pub lstm_layers: usize,
    pub leaky_slope: f64,
}

impl NetConfig {
    /// Weight slots, including cash.
    pub fn slots(&self) -> usize {
        self.assets + usize::from(self.include_cash)
    }

    pub fn feature_dim(&self) -> usize {
        self.slots() * self.hidden
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.assets == 0 || self.window_steps == 0 || self.hidden == 0 || self.lstm_layers == 0 {
            return Err(AgentError::InvalidConfig("network dimensions must be positive"));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(AgentError::InvalidConfig("leaky slope must lie in [0, 1)"));
        }
        Ok(())
    }

    fn leaky(&self) -> Activation {
        Activation::LeakyRelu(self.leaky_slope)
    }
}

/// `ext.in` (5 → H) and `ext.lstm{l}`.
pub fn init_extractor(params: &mut ParamSet, cfg: &NetConfig, rng: &mut FolioRng) -> Result<(), NnError> {
    init_dense(params, "ext.in", CHANNELS, cfg.hidden, rng)?;
    init_lstm(params, "ext", cfg.hidden, cfg.hidden, cfg.lstm_layers, rng)
}

pub fn check_window(cfg: &NetConfig, w: &FeatureWindow) -> Result<(), AgentError> {
    if w.assets() != cfg.assets || w.steps() != cfg.window_steps {
        return Err(AgentError::InvalidState(format!(
            "window is {}x{}, network expects {}x{}",
            w.assets(),
            w.steps(),
            cfg.assets,
            cfg.window_steps
        )));
    }
    Ok(())
}

pub fn check_weights(cfg: &NetConfig, w: &WeightVector) -> Result<(), AgentError> {
    if w.len() != cfg.slots() {
        return Err(AgentError::InvalidState(format!("{} weights, network expects {}", w.len(), cfg.slots())));
    }
    Ok(())
}

/// Features for a batch of windows, `B × slots·H`.
pub fn extract(
    g: &mut Graph,
    binding: &Binding,
    cfg: &NetConfig,
    windows: &[&FeatureWindow],
) -> Result<Var, AgentError> {
    let batch = windows.len();
    let (m, s, h) = (cfg.assets, cfg.window_steps, cfg.hidden);
    for w in windows {
        check_window(cfg, w)?;
    }
    let rows = batch * m;
    let mut steps = Vec::with_capacity(s);
    for step in 0..s {
        let mut data = Vec::with_capacity(rows * CHANNELS);
        for w in windows {
            for a in 0..m {
                data.extend_from_slice(&w.asset(a)[step * CHANNELS..(step + 1) * CHANNELS]);
            }
        }
        let x = g.constant(rows, CHANNELS, data)?;
        steps.push(dense_forward(g, binding, "ext.in", x, Activation::Tanh)?);
    }
    let last = lstm_forward(g, binding, "ext", &steps, cfg.lstm_layers)?;
    let per_sample = g.reshape(last, batch, m * h)?;
    if cfg.include_cash {
        let cash = g.zeros(batch, h);
        Ok(g.concat_cols(&[cash, per_sample])?)
    } else {
        Ok(per_sample)
    }
}

/// Constant `B × slots` matrix of weight vectors.
pub fn stack_weights(g: &mut Graph, weights: &[&WeightVector]) -> Result<Var, AgentError> {
    let cols = weights.first().map_or(0, |w| w.len());
    let data: Vec<f64> = weights.iter().flat_map(|w| w.as_slice().iter().copied()).collect();
    Ok(g.constant(weights.len(), cols, data)?)
}

/// Hidden leaky layers `prefix.h{k}` followed by a linear `prefix.out`
/// initialized in `±HEAD_INIT_BOUND`.
pub fn init_head(
    params: &mut ParamSet,
    prefix: &str,
    input: usize,
    hidden: &[usize],
    output: usize,
    rng: &mut FolioRng,
) -> Result<(), NnError> {
    let mut fan_in = input;
    for (k, &width) in hidden.iter().enumerate() {
        init_dense(params, &format!("{prefix}.h{k}"), fan_in, width, rng)?;
        fan_in = width;
    }
    init_dense_with_bound(params, &format!("{prefix}.out"), fan_in, output, HEAD_INIT_BOUND, rng)
}

pub fn head_forward(
    g: &mut Graph,
    binding: &Binding,
    cfg: &NetConfig,
    prefix: &str,
    hidden_layers: usize,
    x: Var,
) -> Result<Var, NnError> {
    let mut y = x;
    for k in 0..hidden_layers {
        y = dense_forward(g, binding, &format!("{prefix}.h{k}"), y, cfg.leaky())?;
    }
    dense_forward(g, binding, &format!("{prefix}.out"), y, Activation::Linear)
}

/// Extractor plus a value head over `[features | weights | extra]`: the
/// shape shared by critics (extra = action) and value networks (no extra).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub params: ParamSet,
    pub takes_action: bool,
}

pub const VALUE_HIDDEN_LAYERS: usize = 2;

impl ValueNet {
    pub fn new(cfg: &NetConfig, takes_action: bool, rng: &mut FolioRng) -> Result<Self, NnError> {
        let mut params = ParamSet::new();
        init_extractor(&mut params, cfg, rng)?;
        let input = cfg.feature_dim() + cfg.slots() * if takes_action { 2 } else { 1 };
        init_head(&mut params, "v", input, &[cfg.hidden; VALUE_HIDDEN_LAYERS], 1, rng)?;
        Ok(Self { params, takes_action })
    }

    /// `B × 1` values with `params` bound through `binding`.
    pub fn forward(
        g: &mut Graph,
        binding: &Binding,
        cfg: &NetConfig,
        windows: &[&FeatureWindow],
        weights: &[&WeightVector],
        action: Option<Var>,
    ) -> Result<Var, AgentError> {
        let f = extract(g, binding, cfg, windows)?;
        let w = stack_weights(g, weights)?;
        let x = match action {
            Some(a) => g.concat_cols(&[f, w, a])?,
            None => g.concat_cols(&[f, w])?,
        };
        Ok(head_forward(g, binding, cfg, "v", VALUE_HIDDEN_LAYERS, x)?)
    }
}
