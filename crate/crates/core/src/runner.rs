//! Agent-agnostic training and evaluation loops.

use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDate;
use thiserror::Error;

use crate::agent::{Agent, AgentError, Transition};
use crate::env::{EnvError, PortfolioEnv};
use crate::metrics::{build_report, MetricsReport, ReportSettings};
use crate::rng::FolioRng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub steps: usize,
    pub reward_sum: f64,
    pub final_value: f64,
    pub updates: usize,
    /// Mean of every named loss over the episode's updates.
    pub mean_losses: Vec<(&'static str, f64)>,
}

/// One exploring episode with learning, capped at `max_steps` steps.
pub fn run_training_episode(
    env: &PortfolioEnv,
    agent: &mut dyn Agent,
    episode: usize,
    max_steps: usize,
    rng: &mut FolioRng,
) -> Result<EpisodeLog, RunError> {
    agent.begin_episode();
    let mut state = env.reset()?;
    let mut log = EpisodeLog {
        episode,
        steps: 0,
        reward_sum: 0.0,
        final_value: state.value,
        updates: 0,
        mean_losses: Vec::new(),
    };
    while log.steps < max_steps {
        let obs = env.observation(&state);
        let action = agent.act(&obs, true, rng)?;
        let out = env.step(&state, &action)?;
        let next_obs = env.observation(&out.state);
        agent.observe(Transition { state: obs, action, reward: out.reward, next_state: next_obs, done: out.done });
        if agent.ready() {
            let losses = agent.update(rng)?;
            for &(name, value) in losses.entries() {
                match log.mean_losses.iter_mut().find(|(n, _)| *n == name) {
                    Some(entry) => entry.1 += value,
                    None => log.mean_losses.push((name, value)),
                }
            }
            log.updates += 1;
        }
        log.steps += 1;
        log.reward_sum += out.reward;
        log.final_value = out.state.value;
        state = out.state;
        if out.done {
            break;
        }
    }
    if log.updates > 0 {
        let n = log.updates as f64;
        log.mean_losses.iter_mut().for_each(|e| e.1 /= n);
    }
    Ok(log)
}

/// Runs `episodes` training episodes, reporting each to `on_episode`.
pub fn train(
    env: &PortfolioEnv,
    agent: &mut dyn Agent,
    episodes: usize,
    max_steps: usize,
    rng: &mut FolioRng,
    mut on_episode: impl FnMut(&EpisodeLog),
) -> Result<Vec<EpisodeLog>, RunError> {
    let mut logs = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let log = run_training_episode(env, agent, e, max_steps, rng)?;
        on_episode(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Solver details attached to benchmark trace rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub expected_return: f64,
    pub variance: f64,
    pub active_set: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub date: NaiveDate,
    pub weights: Vec<f64>,
    pub gross_return: f64,
    pub cost: f64,
    pub net_return: f64,
    pub value: f64,
    pub reward: f64,
    pub solver: Option<SolverTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backtest {
    pub slots: Vec<String>,
    pub initial_value: f64,
    pub start_date: NaiveDate,
    pub rows: Vec<TraceRow>,
    pub report: MetricsReport,
}

impl Backtest {
    /// `v_0` followed by the value after every step.
    pub fn values(&self) -> Vec<f64> {
        core::iter::once(self.initial_value).chain(self.rows.iter().map(|r| r.value)).collect()
    }
}

/// One deterministic pass over the whole frame without exploration or
/// learning.
pub fn backtest(
    env: &PortfolioEnv,
    agent: &mut dyn Agent,
    rng: &mut FolioRng,
    settings: &ReportSettings,
) -> Result<Backtest, RunError> {
    let mut state = env.reset()?;
    let initial_value = state.value;
    let start_date = env.frame().dates()[state.t];
    let mut rows = Vec::with_capacity(env.episode_len());
    loop {
        let obs = env.observation(&state);
        let action = agent.act(&obs, false, rng)?;
        let solver = agent.last_solution().map(|s| SolverTrace {
            expected_return: s.expected_return,
            variance: s.variance,
            active_set: s.active_set.clone(),
        });
        let out = env.step(&state, &action)?;
        rows.push(TraceRow {
            date: out.info.date,
            weights: out.info.weights.into_inner(),
            gross_return: out.info.gross_return,
            cost: out.info.cost,
            net_return: out.info.net_return,
            value: out.info.value,
            reward: out.info.reward,
            solver,
        });
        state = out.state;
        if out.done {
            break;
        }
    }
    let slots = env.slot_names();
    let net: Vec<f64> = rows.iter().map(|r| r.net_return).collect();
    let values: Vec<f64> = core::iter::once(initial_value).chain(rows.iter().map(|r| r.value)).collect();
    let weights: Vec<&[f64]> = rows.iter().map(|r| r.weights.as_slice()).collect();
    let report = build_report(&net, &values, &weights, &slots, settings);
    Ok(Backtest { slots, initial_value, start_date, rows, report })
}
