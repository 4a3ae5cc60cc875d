//! Soft actor-critic with a state-value network, twin Q critics and a
//! learned entropy temperature.
//!
//! The policy is a tanh-squashed Gaussian over `u ∈ (−1, 1)^slots`; the
//! executed weights are `softmax(k·u)`. Critics score the executed weights,
//! and `log π` carries the tanh correction only.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::network::{
    check_weights, extract, head_forward, init_extractor, init_head, stack_weights, NetConfig, ValueNet,
};
use super::replay::ReplayBuffer;
use super::{restore_params, Agent, AgentError, AgentKind, AgentState, LossRecord, Transition};
use crate::data::FeatureWindow;
use crate::env::{action_from_logits, Observation, WeightVector};
use crate::math;
use crate::nn::{
    adam_step, reparam_sample, soft_update, AdamState, Binding, Graph, ParamSet, Tensor, Var, LOG_STD_MAX, LOG_STD_MIN,
};
use crate::rng::{fill_standard_normal, FolioRng};

const ACTOR_HIDDEN_LAYERS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacConfig {
    pub net: NetConfig,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub initial_alpha: f64,
    /// When false the temperature stays at `initial_alpha` (which may be 0).
    pub learn_alpha: bool,
    /// `k` in `softmax(k·u)`.
    pub action_scale: f64,
    /// Defaults to `−slots`.
    pub target_entropy: Option<f64>,
    pub batch_size: usize,
    pub buffer_capacity: usize,
}

impl SacConfig {
    pub fn new(net: NetConfig) -> Self {
        Self {
            net,
            gamma: 0.99,
            tau: 1e-3,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 1e-3,
            initial_alpha: 1.0,
            learn_alpha: true,
            action_scale: 5.0,
            target_entropy: None,
            batch_size: 64,
            buffer_capacity: 100_000,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        self.net.validate()?;
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return Err(AgentError::InvalidConfig("gamma and tau must lie in [0, 1]"));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(AgentError::InvalidConfig("batch must be positive and fit in the buffer"));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.alpha_lr > 0.0) {
            return Err(AgentError::InvalidConfig("learning rates must be positive"));
        }
        if !(self.initial_alpha >= 0.0) || (self.learn_alpha && self.initial_alpha == 0.0) {
            return Err(AgentError::InvalidConfig("a learned temperature must start positive"));
        }
        if !(self.action_scale > 0.0) {
            return Err(AgentError::InvalidConfig("action scale must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    config: SacConfig,
    actor: ParamSet,
    q1: ParamSet,
    q2: ParamSet,
    value: ParamSet,
    target_value: ParamSet,
    log_alpha: ParamSet,
    actor_opt: AdamState,
    q1_opt: AdamState,
    q2_opt: AdamState,
    value_opt: AdamState,
    alpha_opt: AdamState,
    buffer: ReplayBuffer,
}

/// Executed weights for a pre-squash vector: `softmax(k·tanh(u))`.
pub fn squash_to_simplex(u: &[f64], scale: f64) -> WeightVector {
    let z: Vec<f64> = u.iter().map(|x| scale * math::tanh(*x)).collect();
    action_from_logits(&z)
}

fn states_of<'a>(batch: &'a [&Transition], next: bool) -> (Vec<&'a FeatureWindow>, Vec<&'a WeightVector>) {
    batch
        .iter()
        .map(|t| {
            let s = if next { &t.next_state } else { &t.state };
            (&s.window, &s.weights)
        })
        .unzip()
}

/// Policy sample in a graph: executed weights `B × slots` and `log π` `B × 1`.
pub struct PolicySample {
    pub weights: Var,
    pub log_prob: Var,
}

impl SacAgent {
    pub fn new(config: SacConfig, rng: &mut FolioRng) -> Result<Self, AgentError> {
        config.validate()?;
        let net = &config.net;
        let mut actor = ParamSet::new();
        init_extractor(&mut actor, net, rng)?;
        init_head(
            &mut actor,
            "pi",
            net.feature_dim() + net.slots(),
            &[net.hidden; ACTOR_HIDDEN_LAYERS],
            2 * net.slots(),
            rng,
        )?;
        let q1 = ValueNet::new(net, true, rng)?.params;
        let q2 = ValueNet::new(net, true, rng)?.params;
        let value = ValueNet::new(net, false, rng)?.params;
        let mut log_alpha = ParamSet::new();
        let init = if config.initial_alpha > 0.0 { math::ln(config.initial_alpha) } else { 0.0 };
        log_alpha.insert("log_alpha", Tensor::filled(vec![1], init))?;
        Ok(Self {
            actor_opt: AdamState::new(&actor),
            q1_opt: AdamState::new(&q1),
            q2_opt: AdamState::new(&q2),
            value_opt: AdamState::new(&value),
            alpha_opt: AdamState::new(&log_alpha),
            target_value: value.clone(),
            actor,
            q1,
            q2,
            value,
            log_alpha,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            config,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn actor(&self) -> &ParamSet {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut ParamSet {
        &mut self.actor
    }

    pub fn q1(&self) -> &ParamSet {
        &self.q1
    }

    pub fn q2(&self) -> &ParamSet {
        &self.q2
    }

    pub fn q2_mut(&mut self) -> &mut ParamSet {
        &mut self.q2
    }

    pub fn value_net(&self) -> &ParamSet {
        &self.value
    }

    pub fn target_value(&self) -> &ParamSet {
        &self.target_value
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha.get("log_alpha").expect("log_alpha is always present").data()[0]
    }

    pub fn alpha(&self) -> f64 {
        if self.config.learn_alpha {
            math::exp(self.log_alpha())
        } else {
            self.config.initial_alpha
        }
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or(-(self.config.net.slots() as f64))
    }

    /// Exchanges the two critics together with their optimizer states.
    pub fn swap_critics(&mut self) {
        core::mem::swap(&mut self.q1, &mut self.q2);
        core::mem::swap(&mut self.q1_opt, &mut self.q2_opt);
    }

    /// Mean and clamped-later log-std heads, each `B × slots`.
    fn policy_heads(
        &self,
        g: &mut Graph,
        binding: &Binding,
        windows: &[&FeatureWindow],
        weights: &[&WeightVector],
    ) -> Result<(Var, Var), AgentError> {
        let net = &self.config.net;
        let f = extract(g, binding, net, windows)?;
        let w = stack_weights(g, weights)?;
        let x = g.concat_cols(&[f, w])?;
        let out = head_forward(g, binding, net, "pi", ACTOR_HIDDEN_LAYERS, x)?;
        let k = net.slots();
        Ok((g.slice_cols(out, 0, k)?, g.slice_cols(out, k, 2 * k)?))
    }

    /// Reparameterized policy sample for fixed standard-normal `noise`
    /// (row-major `B × slots`).
    pub fn sample_policy(
        &self,
        g: &mut Graph,
        binding: &Binding,
        windows: &[&FeatureWindow],
        weights: &[&WeightVector],
        noise: &[f64],
    ) -> Result<PolicySample, AgentError> {
        let (mean, log_std) = self.policy_heads(g, binding, windows, weights)?;
        let (u, log_prob) = reparam_sample(g, mean, log_std, noise)?;
        let z = g.scale(u, self.config.action_scale);
        Ok(PolicySample { weights: g.softmax_rows(z), log_prob })
    }

    /// Mean and log-std (clamped) of the Gaussian for one observation.
    pub fn policy_moments(&self, obs: &Observation) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
        check_weights(&self.config.net, &obs.weights)?;
        let mut g = Graph::new();
        let b = g.bind_frozen(&self.actor);
        let (mean, ls) = self.policy_heads(&mut g, &b, &[&obs.window], &[&obs.weights])?;
        let ls = g.value(ls).iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        Ok((g.value(mean).to_vec(), ls))
    }

    fn q_pair(
        &self,
        g: &mut Graph,
        b1: &Binding,
        b2: &Binding,
        windows: &[&FeatureWindow],
        weights: &[&WeightVector],
        action: Var,
    ) -> Result<(Var, Var), AgentError> {
        let net = &self.config.net;
        let q1 = ValueNet::forward(g, b1, net, windows, weights, Some(action))?;
        let q2 = ValueNet::forward(g, b2, net, windows, weights, Some(action))?;
        Ok((q1, q2))
    }

    /// `y^v = min_j Q_j(s, ã) − α·log π(ã|s)` with `ã` drawn using `noise`.
    pub fn value_targets(&self, batch: &[&Transition], noise: &[f64]) -> Result<Vec<f64>, AgentError> {
        let (windows, weights) = states_of(batch, false);
        let mut g = Graph::new();
        let ba = g.bind_frozen(&self.actor);
        let b1 = g.bind_frozen(&self.q1);
        let b2 = g.bind_frozen(&self.q2);
        let s = self.sample_policy(&mut g, &ba, &windows, &weights, noise)?;
        let (q1, q2) = self.q_pair(&mut g, &b1, &b2, &windows, &weights, s.weights)?;
        let q = g.min(q1, q2)?;
        let alpha = self.alpha();
        Ok(g.value(q).iter().zip(g.value(s.log_prob)).map(|(q, lp)| q - alpha * lp).collect())
    }

    /// `y^q = r + γ(1 − done)·V'(s')`.
    pub fn critic_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>, AgentError> {
        let (windows, weights) = states_of(batch, true);
        let mut g = Graph::new();
        let b = g.bind_frozen(&self.target_value);
        let v = ValueNet::forward(&mut g, &b, &self.config.net, &windows, &weights, None)?;
        let gamma = self.config.gamma;
        Ok(batch.iter().zip(g.value(v)).map(|(t, v)| if t.done { t.reward } else { t.reward + gamma * v }).collect())
    }

    /// Both critics at the stored `(s, a)`.
    pub fn q_values(&self, batch: &[&Transition]) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
        let (windows, weights) = states_of(batch, false);
        let actions: Vec<&WeightVector> = batch.iter().map(|t| &t.action).collect();
        let mut g = Graph::new();
        let b1 = g.bind_frozen(&self.q1);
        let b2 = g.bind_frozen(&self.q2);
        let a = stack_weights(&mut g, &actions)?;
        let (q1, q2) = self.q_pair(&mut g, &b1, &b2, &windows, &weights, a)?;
        Ok((g.value(q1).to_vec(), g.value(q2).to_vec()))
    }

    pub fn value_update(&mut self, batch: &[&Transition], noise: &[f64]) -> Result<f64, AgentError> {
        let y = self.value_targets(batch, noise)?;
        let (windows, weights) = states_of(batch, false);
        let mut g = Graph::new();
        let b = g.bind(&self.value);
        let v = ValueNet::forward(&mut g, &b, &self.config.net, &windows, &weights, None)?;
        let loss = mse(&mut g, v, y)?;
        let value = g.scalar(loss)?;
        g.backward(loss)?.write(&b, &mut self.value)?;
        adam_step(&mut self.value, &mut self.value_opt, self.config.critic_lr)?;
        Ok(value)
    }

    /// One step of each critic towards `y^q`; returns both losses.
    pub fn critic_update(&mut self, batch: &[&Transition]) -> Result<(f64, f64), AgentError> {
        let y = self.critic_targets(batch)?;
        let (windows, weights) = states_of(batch, false);
        let actions: Vec<&WeightVector> = batch.iter().map(|t| &t.action).collect();
        let mut g = Graph::new();
        let b1 = g.bind(&self.q1);
        let b2 = g.bind(&self.q2);
        let a = stack_weights(&mut g, &actions)?;
        let (q1, q2) = self.q_pair(&mut g, &b1, &b2, &windows, &weights, a)?;
        let l1 = mse(&mut g, q1, y.clone())?;
        let l2 = mse(&mut g, q2, y)?;
        let (v1, v2) = (g.scalar(l1)?, g.scalar(l2)?);
        let total = g.add(l1, l2)?;
        let grads = g.backward(total)?;
        grads.write(&b1, &mut self.q1)?;
        grads.write(&b2, &mut self.q2)?;
        adam_step(&mut self.q1, &mut self.q1_opt, self.config.critic_lr)?;
        adam_step(&mut self.q2, &mut self.q2_opt, self.config.critic_lr)?;
        Ok((v1, v2))
    }

    // mean(α·log π − min_j Q_j) over a reparameterized sample
    fn actor_objective(
        &self,
        g: &mut Graph,
        actor: &Binding,
        batch: &[&Transition],
        noise: &[f64],
    ) -> Result<(Var, Var), AgentError> {
        let (windows, weights) = states_of(batch, false);
        let b1 = g.bind_frozen(&self.q1);
        let b2 = g.bind_frozen(&self.q2);
        let s = self.sample_policy(g, actor, &windows, &weights, noise)?;
        let (q1, q2) = self.q_pair(g, &b1, &b2, &windows, &weights, s.weights)?;
        let q = g.min(q1, q2)?;
        let ent = g.scale(s.log_prob, self.alpha());
        let per = g.sub(ent, q)?;
        Ok((g.mean_all(per), s.log_prob))
    }

    /// Actor loss at fixed noise, without updating anything.
    pub fn actor_loss(&self, batch: &[&Transition], noise: &[f64]) -> Result<f64, AgentError> {
        let mut g = Graph::new();
        let b = g.bind_frozen(&self.actor);
        let (loss, _) = self.actor_objective(&mut g, &b, batch, noise)?;
        Ok(g.scalar(loss)?)
    }

    /// One actor step; returns the loss and the sampled `log π` values.
    pub fn actor_update(&mut self, batch: &[&Transition], noise: &[f64]) -> Result<(f64, Vec<f64>), AgentError> {
        let mut g = Graph::new();
        let b = g.bind(&self.actor);
        let (loss, log_prob) = self.actor_objective(&mut g, &b, batch, noise)?;
        let value = g.scalar(loss)?;
        let log_probs = g.value(log_prob).to_vec();
        g.backward(loss)?.write(&b, &mut self.actor)?;
        adam_step(&mut self.actor, &mut self.actor_opt, self.config.actor_lr)?;
        Ok((value, log_probs))
    }

    /// `∂/∂log α` of `−log α · mean(log π + H̄)`.
    pub fn temperature_gradient(&self, log_probs: &[f64]) -> f64 {
        let mean = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
        -(mean + self.target_entropy())
    }

    /// Temperature step; returns the loss. A no-op when α is fixed.
    pub fn temperature_update(&mut self, log_probs: &[f64]) -> Result<f64, AgentError> {
        let grad = self.temperature_gradient(log_probs);
        let loss = self.log_alpha() * grad;
        if self.config.learn_alpha {
            let t = self.log_alpha.get_mut("log_alpha").expect("log_alpha is always present");
            t.accumulate_grad(&[grad]);
            adam_step(&mut self.log_alpha, &mut self.alpha_opt, self.config.alpha_lr)?;
        }
        Ok(loss)
    }

    pub fn soft_update_target(&mut self) -> Result<(), AgentError> {
        Ok(soft_update(&mut self.target_value, &self.value, self.config.tau)?)
    }

    fn policy_noise(&self, rows: usize, rng: &mut FolioRng) -> Vec<f64> {
        let mut n = vec![0.0; rows * self.config.net.slots()];
        fill_standard_normal(rng, &mut n);
        n
    }
}

fn mse(g: &mut Graph, pred: Var, target: Vec<f64>) -> Result<Var, AgentError> {
    let (rows, cols) = g.dims(pred);
    let t = g.constant(rows, cols, target)?;
    let d = g.sub(pred, t)?;
    let sq = g.square(d);
    Ok(g.mean_all(sq))
}

impl Agent for SacAgent {
    fn kind(&self) -> AgentKind {
        AgentKind::Sac
    }

    fn act(&mut self, obs: &Observation, explore: bool, rng: &mut FolioRng) -> Result<WeightVector, AgentError> {
        let (mean, log_std) = self.policy_moments(obs)?;
        let u: Vec<f64> = if explore {
            let eps = self.policy_noise(1, rng);
            mean.iter().zip(&log_std).zip(&eps).map(|((m, ls), e)| m + math::exp(*ls) * e).collect()
        } else {
            mean
        };
        Ok(squash_to_simplex(&u, self.config.action_scale))
    }

    fn observe(&mut self, transition: Transition) {
        self.buffer.push(transition);
    }

    fn ready(&self) -> bool {
        self.buffer.len() >= self.config.batch_size
    }

    fn update(&mut self, rng: &mut FolioRng) -> Result<LossRecord, AgentError> {
        let owned: Vec<Transition> = self.buffer.sample(self.config.batch_size, rng)?.into_iter().cloned().collect();
        let batch: Vec<&Transition> = owned.iter().collect();
        let value_noise = self.policy_noise(batch.len(), rng);
        let actor_noise = self.policy_noise(batch.len(), rng);
        let value_loss = self.value_update(&batch, &value_noise)?;
        let (q1_loss, q2_loss) = self.critic_update(&batch)?;
        let (actor_loss, log_probs) = self.actor_update(&batch, &actor_noise)?;
        let alpha_loss = self.temperature_update(&log_probs)?;
        self.soft_update_target()?;
        let mut rec = LossRecord::new();
        rec.push("q1_loss", q1_loss);
        rec.push("q2_loss", q2_loss);
        rec.push("value_loss", value_loss);
        rec.push("actor_loss", actor_loss);
        rec.push("alpha_loss", alpha_loss);
        rec.push("alpha", self.alpha());
        Ok(rec)
    }

    fn export_state(&self) -> AgentState {
        let named = |n: &str, p: &ParamSet| (String::from(n), p.clone());
        let opt = |n: &str, o: &AdamState| (String::from(n), o.clone());
        AgentState {
            params: vec![
                named("actor", &self.actor),
                named("q1", &self.q1),
                named("q2", &self.q2),
                named("value", &self.value),
                named("target_value", &self.target_value),
                named("log_alpha", &self.log_alpha),
            ],
            optimizers: vec![
                opt("actor", &self.actor_opt),
                opt("q1", &self.q1_opt),
                opt("q2", &self.q2_opt),
                opt("value", &self.value_opt),
                opt("log_alpha", &self.alpha_opt),
            ],
            vectors: Vec::new(),
        }
    }

    fn import_state(&mut self, state: &AgentState) -> Result<(), AgentError> {
        restore_params(&mut self.actor, state.params("actor")?, "actor")?;
        restore_params(&mut self.q1, state.params("q1")?, "q1")?;
        restore_params(&mut self.q2, state.params("q2")?, "q2")?;
        restore_params(&mut self.value, state.params("value")?, "value")?;
        restore_params(&mut self.target_value, state.params("target_value")?, "target_value")?;
        restore_params(&mut self.log_alpha, state.params("log_alpha")?, "log_alpha")?;
        let pairs: [(&str, &ParamSet, &mut AdamState); 5] = [
            ("actor", &self.actor, &mut self.actor_opt),
            ("q1", &self.q1, &mut self.q1_opt),
            ("q2", &self.q2, &mut self.q2_opt),
            ("value", &self.value, &mut self.value_opt),
            ("log_alpha", &self.log_alpha, &mut self.alpha_opt),
        ];
        for (name, params, opt) in pairs {
            let saved = state.optimizer(name)?;
            if !saved.first_moment().same_layout(params) {
                return Err(AgentError::StateMismatch(alloc::format!("optimizer {name}")));
            }
            *opt = saved.clone();
        }
        Ok(())
    }
}
