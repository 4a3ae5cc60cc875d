//! Deterministic policy gradient agent with target networks and OU
//! exploration on the policy logits.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::network::{
    check_weights, extract, head_forward, init_extractor, init_head, stack_weights, NetConfig, ValueNet,
};
use super::noise::OuNoise;
use super::replay::ReplayBuffer;
use super::{restore_params, Agent, AgentError, AgentKind, AgentState, LossRecord, Transition};
use crate::data::FeatureWindow;
use crate::env::{action_from_logits, Observation, WeightVector};
use crate::nn::{adam_step, soft_update, AdamState, Binding, Graph, ParamSet, Var};
use crate::rng::FolioRng;

const ACTOR_HIDDEN_LAYERS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpgConfig {
    pub net: NetConfig,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    pub ou_mu: f64,
    pub ou_dt: f64,
}

impl DdpgConfig {
    pub fn new(net: NetConfig) -> Self {
        Self {
            net,
            gamma: 0.99,
            tau: 1e-3,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            batch_size: 64,
            buffer_capacity: 100_000,
            ou_theta: 0.2,
            ou_sigma: 0.3,
            ou_mu: 0.0,
            ou_dt: 1.0,
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
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(AgentError::InvalidConfig("learning rates must be positive"));
        }
        if !(self.ou_theta > 0.0 && self.ou_sigma >= 0.0 && self.ou_dt > 0.0) {
            return Err(AgentError::InvalidConfig("OU parameters out of range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DdpgAgent {
    config: DdpgConfig,
    actor: ParamSet,
    critic: ParamSet,
    target_actor: ParamSet,
    target_critic: ParamSet,
    actor_opt: AdamState,
    critic_opt: AdamState,
    noise: OuNoise,
    buffer: ReplayBuffer,
}

fn new_actor(cfg: &NetConfig, rng: &mut FolioRng) -> Result<ParamSet, AgentError> {
    let mut p = ParamSet::new();
    init_extractor(&mut p, cfg, rng)?;
    init_head(&mut p, "pi", cfg.feature_dim() + cfg.slots(), &[cfg.hidden; ACTOR_HIDDEN_LAYERS], cfg.slots(), rng)?;
    Ok(p)
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

impl DdpgAgent {
    pub fn new(config: DdpgConfig, rng: &mut FolioRng) -> Result<Self, AgentError> {
        config.validate()?;
        let actor = new_actor(&config.net, rng)?;
        let critic = ValueNet::new(&config.net, true, rng)?.params;
        let noise = OuNoise::new(config.net.slots(), config.ou_theta, config.ou_sigma, config.ou_mu, config.ou_dt);
        Ok(Self {
            actor_opt: AdamState::new(&actor),
            critic_opt: AdamState::new(&critic),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            noise,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            config,
        })
    }

    pub fn config(&self) -> &DdpgConfig {
        &self.config
    }

    pub fn actor(&self) -> &ParamSet {
        &self.actor
    }

    pub fn critic(&self) -> &ParamSet {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut ParamSet {
        &mut self.critic
    }

    pub fn target_actor(&self) -> &ParamSet {
        &self.target_actor
    }

    pub fn target_critic(&self) -> &ParamSet {
        &self.target_critic
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn noise(&self) -> &OuNoise {
        &self.noise
    }

    /// Policy logits `B × slots`.
    fn logits(
        &self,
        g: &mut Graph,
        binding: &Binding,
        windows: &[&FeatureWindow],
        weights: &[&WeightVector],
    ) -> Result<Var, AgentError> {
        let f = extract(g, binding, &self.config.net, windows)?;
        let w = stack_weights(g, weights)?;
        let x = g.concat_cols(&[f, w])?;
        Ok(head_forward(g, binding, &self.config.net, "pi", ACTOR_HIDDEN_LAYERS, x)?)
    }

    /// Noise-free policy logits for one observation.
    pub fn policy_logits(&self, obs: &Observation) -> Result<Vec<f64>, AgentError> {
        check_weights(&self.config.net, &obs.weights)?;
        let mut g = Graph::new();
        let b = g.bind_frozen(&self.actor);
        let l = self.logits(&mut g, &b, &[&obs.window], &[&obs.weights])?;
        Ok(g.value(l).to_vec())
    }

    /// Online critic `Q(s, a)` for each transition.
    pub fn q_values(&self, batch: &[&Transition]) -> Result<Vec<f64>, AgentError> {
        let (windows, weights) = states_of(batch, false);
        let actions: Vec<&WeightVector> = batch.iter().map(|t| &t.action).collect();
        let mut g = Graph::new();
        let b = g.bind_frozen(&self.critic);
        let a = stack_weights(&mut g, &actions)?;
        let q = ValueNet::forward(&mut g, &b, &self.config.net, &windows, &weights, Some(a))?;
        Ok(g.value(q).to_vec())
    }

    /// `y = r + γ(1 − done)·Q'(s', μ'(s'))`.
    pub fn critic_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>, AgentError> {
        let (windows, weights) = states_of(batch, true);
        let mut g = Graph::new();
        let ba = g.bind_frozen(&self.target_actor);
        let bc = g.bind_frozen(&self.target_critic);
        let logits = self.logits(&mut g, &ba, &windows, &weights)?;
        let a = g.softmax_rows(logits);
        let q = ValueNet::forward(&mut g, &bc, &self.config.net, &windows, &weights, Some(a))?;
        let gamma = self.config.gamma;
        Ok(batch.iter().zip(g.value(q)).map(|(t, q)| if t.done { t.reward } else { t.reward + gamma * q }).collect())
    }

    /// One Adam step of the critic on the TD loss; returns the loss.
    pub fn critic_update(&mut self, batch: &[&Transition]) -> Result<f64, AgentError> {
        let y = self.critic_targets(batch)?;
        let (windows, weights) = states_of(batch, false);
        let actions: Vec<&WeightVector> = batch.iter().map(|t| &t.action).collect();
        let mut g = Graph::new();
        let b = g.bind(&self.critic);
        let a = stack_weights(&mut g, &actions)?;
        let q = ValueNet::forward(&mut g, &b, &self.config.net, &windows, &weights, Some(a))?;
        let target = g.constant(batch.len(), 1, y)?;
        let diff = g.sub(q, target)?;
        let sq = g.square(diff);
        let loss = g.mean_all(sq);
        let value = g.scalar(loss)?;
        g.backward(loss)?.write(&b, &mut self.critic)?;
        adam_step(&mut self.critic, &mut self.critic_opt, self.config.critic_lr)?;
        Ok(value)
    }

    /// One Adam step of the actor descending `−mean Q(s, μ(s))` with the
    /// critic held fixed; returns that loss.
    pub fn actor_update(&mut self, batch: &[&Transition]) -> Result<f64, AgentError> {
        let (windows, weights) = states_of(batch, false);
        let mut g = Graph::new();
        let ba = g.bind(&self.actor);
        let bc = g.bind_frozen(&self.critic);
        let logits = self.logits(&mut g, &ba, &windows, &weights)?;
        let a = g.softmax_rows(logits);
        let q = ValueNet::forward(&mut g, &bc, &self.config.net, &windows, &weights, Some(a))?;
        let mean_q = g.mean_all(q);
        let loss = g.scale(mean_q, -1.0);
        let value = g.scalar(loss)?;
        g.backward(loss)?.write(&ba, &mut self.actor)?;
        adam_step(&mut self.actor, &mut self.actor_opt, self.config.actor_lr)?;
        Ok(value)
    }

    pub fn soft_update_targets(&mut self) -> Result<(), AgentError> {
        soft_update(&mut self.target_actor, &self.actor, self.config.tau)?;
        soft_update(&mut self.target_critic, &self.critic, self.config.tau)?;
        Ok(())
    }

    fn sample_batch(&self, rng: &mut FolioRng) -> Result<Vec<Transition>, AgentError> {
        Ok(self.buffer.sample(self.config.batch_size, rng)?.into_iter().cloned().collect())
    }
}

impl Agent for DdpgAgent {
    fn kind(&self) -> AgentKind {
        AgentKind::Ddpg
    }

    fn act(&mut self, obs: &Observation, explore: bool, rng: &mut FolioRng) -> Result<WeightVector, AgentError> {
        let mut logits = self.policy_logits(obs)?;
        if explore {
            for (l, n) in logits.iter_mut().zip(self.noise.sample(rng)) {
                *l += n;
            }
        }
        Ok(action_from_logits(&logits))
    }

    fn observe(&mut self, transition: Transition) {
        self.buffer.push(transition);
    }

    fn ready(&self) -> bool {
        self.buffer.len() >= self.config.batch_size
    }

    fn update(&mut self, rng: &mut FolioRng) -> Result<LossRecord, AgentError> {
        let owned = self.sample_batch(rng)?;
        let batch: Vec<&Transition> = owned.iter().collect();
        let critic_loss = self.critic_update(&batch)?;
        let actor_loss = self.actor_update(&batch)?;
        self.soft_update_targets()?;
        let mut rec = LossRecord::new();
        rec.push("critic_loss", critic_loss);
        rec.push("actor_loss", actor_loss);
        Ok(rec)
    }

    fn begin_episode(&mut self) {
        self.noise.reset();
    }

    fn export_state(&self) -> AgentState {
        AgentState {
            params: vec![
                (String::from("actor"), self.actor.clone()),
                (String::from("critic"), self.critic.clone()),
                (String::from("target_actor"), self.target_actor.clone()),
                (String::from("target_critic"), self.target_critic.clone()),
            ],
            optimizers: vec![
                (String::from("actor"), self.actor_opt.clone()),
                (String::from("critic"), self.critic_opt.clone()),
            ],
            vectors: vec![(String::from("noise"), self.noise.state().to_vec())],
        }
    }

    fn import_state(&mut self, state: &AgentState) -> Result<(), AgentError> {
        restore_params(&mut self.actor, state.params("actor")?, "actor")?;
        restore_params(&mut self.critic, state.params("critic")?, "critic")?;
        restore_params(&mut self.target_actor, state.params("target_actor")?, "target_actor")?;
        restore_params(&mut self.target_critic, state.params("target_critic")?, "target_critic")?;
        let actor_opt = state.optimizer("actor")?;
        let critic_opt = state.optimizer("critic")?;
        if !actor_opt.first_moment().same_layout(&self.actor) || !critic_opt.first_moment().same_layout(&self.critic) {
            return Err(AgentError::StateMismatch("optimizer layout".into()));
        }
        self.actor_opt = actor_opt.clone();
        self.critic_opt = critic_opt.clone();
        let noise = state.vector("noise")?;
        if noise.len() != self.noise.state().len() {
            return Err(AgentError::StateMismatch("noise dimension".into()));
        }
        self.noise.set_state(noise);
        Ok(())
    }
}
