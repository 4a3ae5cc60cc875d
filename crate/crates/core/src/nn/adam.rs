use super::{NnError, ParamSet};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates mirroring a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: ParamSet,
    v: ParamSet,
    step: u64,
    config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config(params: &ParamSet, config: AdamConfig) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0, config }
    }

    pub fn from_parts(m: ParamSet, v: ParamSet, step: u64, config: AdamConfig) -> Result<Self, NnError> {
        if !m.same_layout(&v) {
            return Err(NnError::ParamMismatch);
        }
        Ok(Self { m, v, step, config })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn first_moment(&self) -> &ParamSet {
        &self.m
    }

    pub fn second_moment(&self) -> &ParamSet {
        &self.v
    }
}

/// One bias-corrected Adam update; gradients are cleared afterwards.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, lr: f64) -> Result<(), NnError> {
    if !params.same_layout(&state.m) {
        return Err(NnError::ParamMismatch);
    }
    if let Some((name, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
        return Err(NnError::MissingGrad(name.into()));
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - math::powf(beta1, state.step as f64);
    let bc2 = 1.0 - math::powf(beta2, state.step as f64);
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for ((_, p), ((_, m), (_, v))) in params.iter_mut().zip(moments) {
        let grad = p.take_grad().unwrap_or_default();
        let (m, v) = (m.data_mut(), v.data_mut());
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *w -= lr * m_hat / (math::sqrt(v_hat) + eps);
        }
    }
    Ok(())
}
