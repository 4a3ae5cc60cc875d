//! Mean-variance benchmark: re-solves the long-only program every day from
//! trailing returns. It does not learn.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;

use super::{Agent, AgentError, AgentKind, AgentState, LossRecord, Transition};
use crate::data::MarketFrame;
use crate::env::{Observation, WeightVector};
use crate::markowitz::{moments_from_returns, solve_constrained, trailing_returns, MptSolution};
use crate::rng::FolioRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MptConfig {
    pub lookback: usize,
    pub lambda: f64,
    pub include_cash: bool,
}

impl Default for MptConfig {
    fn default() -> Self {
        Self { lookback: 60, lambda: 1.0, include_cash: false }
    }
}

#[derive(Debug, Clone)]
pub struct MptAgent {
    /// Full history, so estimates at the start of a later split can look back
    /// across the split boundary.
    frame: Arc<MarketFrame>,
    config: MptConfig,
    last: Option<MptSolution>,
}

impl MptAgent {
    pub fn new(frame: Arc<MarketFrame>, config: MptConfig) -> Result<Self, AgentError> {
        if config.lookback < 2 || !(config.lambda >= 0.0) {
            return Err(AgentError::InvalidConfig("lookback must be at least 2 and lambda nonnegative"));
        }
        Ok(Self { frame, config, last: None })
    }

    pub fn config(&self) -> &MptConfig {
        &self.config
    }

    pub fn solve_at(&self, day: usize) -> Result<MptSolution, AgentError> {
        let mut returns = trailing_returns(&self.frame, day, self.config.lookback)?;
        if self.config.include_cash {
            returns.insert(0, vec![0.0; self.config.lookback]);
        }
        let est = moments_from_returns(&returns);
        Ok(solve_constrained(&est.mu, &est.cov, self.config.lambda)?)
    }
}

impl Agent for MptAgent {
    fn kind(&self) -> AgentKind {
        AgentKind::Mpt
    }

    fn act(&mut self, obs: &Observation, _explore: bool, _rng: &mut FolioRng) -> Result<WeightVector, AgentError> {
        let day = self
            .frame
            .index_of(obs.date)
            .ok_or_else(|| AgentError::InvalidState(format!("date {} is not in the frame", obs.date)))?;
        let solution = self.solve_at(day)?;
        let weights = solution.weights.clone();
        self.last = Some(solution);
        Ok(weights)
    }

    fn observe(&mut self, _transition: Transition) {}

    fn ready(&self) -> bool {
        true
    }

    fn update(&mut self, _rng: &mut FolioRng) -> Result<LossRecord, AgentError> {
        Ok(LossRecord::new())
    }

    fn last_solution(&self) -> Option<&MptSolution> {
        self.last.as_ref()
    }

    fn export_state(&self) -> AgentState {
        AgentState::default()
    }

    fn import_state(&mut self, _state: &AgentState) -> Result<(), AgentError> {
        Ok(())
    }
}
