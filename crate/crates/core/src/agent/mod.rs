//! The agent contract and its three implementations.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::env::{EnvError, Observation, WeightVector};
use crate::markowitz::{MptError, MptSolution};
use crate::nn::{AdamState, NnError, ParamSet};
use crate::rng::FolioRng;

pub mod ddpg;
pub mod mpt;
pub mod network;
pub mod noise;
pub mod replay;
pub mod sac;

pub use ddpg::{DdpgAgent, DdpgConfig};
pub use mpt::{MptAgent, MptConfig};
pub use network::NetConfig;
pub use noise::OuNoise;
pub use replay::ReplayBuffer;
pub use sac::{SacAgent, SacConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("replay buffer holds {size} transitions, batch needs {batch}")]
    NotEnoughSamples { size: usize, batch: usize },
    #[error("malformed state: {0}")]
    InvalidState(String),
    #[error("invalid agent config: {0}")]
    InvalidConfig(&'static str),
    #[error("saved agent state does not fit this agent: {0}")]
    StateMismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Mpt(#[from] MptError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: WeightVector,
    pub reward: f64,
    pub next_state: Observation,
    pub done: bool,
}

/// Named scalar losses from one update, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossRecord {
    entries: Vec<(&'static str, f64)>,
}

impl LossRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &'static str, value: f64) {
        self.entries.push((name, value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }

    pub fn entries(&self) -> &[(&'static str, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    Ddpg,
    Sac,
    Mpt,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Ddpg => "ddpg",
            AgentKind::Sac => "sac",
            AgentKind::Mpt => "mpt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ddpg" => Some(AgentKind::Ddpg),
            "sac" => Some(AgentKind::Sac),
            "mpt" => Some(AgentKind::Mpt),
            _ => None,
        }
    }
}

/// Everything needed to resume an agent, grouped by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentState {
    pub params: Vec<(String, ParamSet)>,
    pub optimizers: Vec<(String, AdamState)>,
    pub vectors: Vec<(String, Vec<f64>)>,
}

impl AgentState {
    pub fn params(&self, name: &str) -> Result<&ParamSet, AgentError> {
        lookup(&self.params, name)
    }

    pub fn optimizer(&self, name: &str) -> Result<&AdamState, AgentError> {
        lookup(&self.optimizers, name)
    }

    pub fn vector(&self, name: &str) -> Result<&[f64], AgentError> {
        lookup(&self.vectors, name).map(Vec::as_slice)
    }
}

fn lookup<'a, T>(items: &'a [(String, T)], name: &str) -> Result<&'a T, AgentError> {
    items
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, v)| v)
        .ok_or_else(|| AgentError::StateMismatch(alloc::format!("missing {name}")))
}

/// Replaces `current` with `saved` after checking the layouts agree.
pub(crate) fn restore_params(current: &mut ParamSet, saved: &ParamSet, name: &str) -> Result<(), AgentError> {
    if !current.same_layout(saved) {
        return Err(AgentError::StateMismatch(alloc::format!("layout of {name}")));
    }
    *current = saved.clone();
    Ok(())
}

/// Common interface driven by the training and backtest loops.
pub trait Agent {
    fn kind(&self) -> AgentKind;

    /// Portfolio weights for `obs`. With `explore` false the result is a
    /// deterministic function of the observation and parameters.
    fn act(&mut self, obs: &Observation, explore: bool, rng: &mut FolioRng) -> Result<WeightVector, AgentError>;

    fn observe(&mut self, transition: Transition);

    /// Whether [`Agent::update`] has enough data to run.
    fn ready(&self) -> bool;

    fn update(&mut self, rng: &mut FolioRng) -> Result<LossRecord, AgentError>;

    /// Called at the start of every episode.
    fn begin_episode(&mut self) {}

    /// Optimizer details of the last action, for agents that have them.
    fn last_solution(&self) -> Option<&MptSolution> {
        None
    }

    fn export_state(&self) -> AgentState;

    fn import_state(&mut self, state: &AgentState) -> Result<(), AgentError>;
}
