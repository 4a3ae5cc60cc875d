//! Daily rebalancing simulator.
//!
//! An action chosen after the close of day `t` is held over the close-to-close
//! move from `t` to `t + 1`. Turnover is measured against the previous
//! action without drift adjustment and charged at `cost_rate` per unit.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use chrono::NaiveDate;
use thiserror::Error;

use crate::data::{
    compute_log_diffs, make_window, standardize, DataError, FeatureArray, FeatureStats, FeatureWindow, MarketFrame,
};
use crate::math;
use crate::nn::softmax_in_place;

/// Tolerance on `Σw = 1` for every executable weight vector.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Below this the DSR denominator is treated as singular and the reward is 0.
pub const DSR_SINGULAR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("frame has {days} days, at least {needed} are required")]
    FrameTooShort { days: usize, needed: usize },
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("portfolio value fell to {value}")]
    Bankrupt { value: f64 },
    #[error("portfolio values must be positive")]
    NonPositiveValue,
    #[error("invalid environment config: {0}")]
    InvalidConfig(&'static str),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self, EnvError> {
        if weights.is_empty() {
            return Err(EnvError::InvalidAction("empty weight vector".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(EnvError::InvalidAction(format!("weight {w} is negative or not finite")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(EnvError::InvalidAction(format!("weights sum to {sum}")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// Everything in `slot`.
    pub fn concentrated(n: usize, slot: usize) -> Self {
        let mut w = vec![0.0; n];
        w[slot] = 1.0;
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `Σ |self − other|`.
    pub fn turnover(&self, other: &WeightVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }
}

/// Softmax of raw policy outputs.
pub fn action_from_logits(raw: &[f64]) -> WeightVector {
    let mut w = raw.to_vec();
    softmax_in_place(&mut w);
    WeightVector(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    LogReturn,
    Dsr,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub cost_rate: f64,
    pub window: usize,
    pub include_cash: bool,
    pub reward_kind: RewardKind,
    pub dsr_eta: f64,
    pub initial_value: f64,
    pub discount: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            cost_rate: 0.001,
            window: 50,
            include_cash: false,
            reward_kind: RewardKind::LogReturn,
            dsr_eta: 0.01,
            initial_value: 1.0,
            discount: 0.99,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(0.0..1.0).contains(&self.cost_rate) {
            return Err(EnvError::InvalidConfig("cost rate must lie in [0, 1)"));
        }
        if self.window < 2 {
            return Err(EnvError::InvalidConfig("window must be at least 2"));
        }
        if !(self.dsr_eta > 0.0 && self.dsr_eta <= 1.0) {
            return Err(EnvError::InvalidConfig("dsr eta must lie in (0, 1]"));
        }
        if !(self.initial_value > 0.0) {
            return Err(EnvError::InvalidConfig("initial value must be positive"));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(EnvError::InvalidConfig("discount must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Exponential moment estimates behind the differential Sharpe ratio.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DsrState {
    pub a: f64,
    pub b: f64,
}

pub fn reward_log(value: f64, next_value: f64) -> Result<f64, EnvError> {
    if !(value > 0.0 && next_value > 0.0) {
        return Err(EnvError::NonPositiveValue);
    }
    Ok(math::ln(next_value / value))
}

/// Differential Sharpe ratio of return `rho` using the moments before the
/// update, followed by the moment update itself.
pub fn reward_dsr(state: DsrState, rho: f64, eta: f64) -> (f64, DsrState) {
    let DsrState { a, b } = state;
    let var = b - a * a;
    let reward = if var <= DSR_SINGULAR_EPS {
        0.0
    } else {
        (b * (rho - a) - 0.5 * a * (rho * rho - b)) / (var * math::sqrt(var))
    };
    let next = DsrState { a: a + eta * (rho - a), b: b + eta * (rho * rho - b) };
    (reward, next)
}

/// What an agent sees after the close of a day.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub day: usize,
    pub date: NaiveDate,
    pub window: FeatureWindow,
    pub weights: WeightVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub t: usize,
    pub window: FeatureWindow,
    pub weights: WeightVector,
    pub value: f64,
    pub dsr: DsrState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// Date of the close at which the step's return is realized.
    pub date: NaiveDate,
    pub weights: WeightVector,
    pub gross_return: f64,
    pub cost: f64,
    pub net_return: f64,
    /// Simple close-to-close return of every slot (cash first when enabled).
    pub asset_returns: Vec<f64>,
    pub value: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Simulator over one frame and its standardized features.
#[derive(Debug, Clone)]
pub struct PortfolioEnv {
    frame: Arc<MarketFrame>,
    features: Arc<FeatureArray>,
    config: EnvConfig,
}

impl PortfolioEnv {
    pub fn new(frame: Arc<MarketFrame>, features: Arc<FeatureArray>, config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        if features.assets() != frame.num_assets() || features.steps() + 1 != frame.len() {
            return Err(EnvError::InvalidConfig("features do not match the frame"));
        }
        Ok(Self { frame, features, config })
    }

    /// Computes log-differences of `frame` and standardizes them with `stats`.
    pub fn from_frame(
        frame: MarketFrame,
        stats: &FeatureStats,
        volume_eps: f64,
        config: EnvConfig,
    ) -> Result<Self, EnvError> {
        let features = standardize(&compute_log_diffs(&frame, volume_eps)?, stats)?;
        Self::new(Arc::new(frame), Arc::new(features), config)
    }

    pub fn frame(&self) -> &Arc<MarketFrame> {
        &self.frame
    }

    pub fn features(&self) -> &Arc<FeatureArray> {
        &self.features
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Number of weight slots: assets, plus one leading cash slot if enabled.
    pub fn action_dim(&self) -> usize {
        self.frame.num_assets() + usize::from(self.config.include_cash)
    }

    /// Labels of the weight slots.
    pub fn slot_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.action_dim());
        if self.config.include_cash {
            names.push(String::from("cash"));
        }
        names.extend(self.frame.assets().iter().cloned());
        names
    }

    /// Steps in a full episode, `T − W`.
    pub fn episode_len(&self) -> usize {
        self.frame.len().saturating_sub(self.config.window)
    }

    pub fn reset(&self) -> Result<EnvState, EnvError> {
        let needed = self.config.window + 1;
        if self.frame.len() < needed {
            return Err(EnvError::FrameTooShort { days: self.frame.len(), needed });
        }
        let t = self.config.window - 1;
        let weights = if self.config.include_cash {
            WeightVector::concentrated(self.action_dim(), 0)
        } else {
            WeightVector::uniform(self.action_dim())
        };
        Ok(EnvState {
            t,
            window: make_window(&self.features, t, self.config.window)?,
            weights,
            value: self.config.initial_value,
            dsr: DsrState::default(),
        })
    }

    pub fn observation(&self, state: &EnvState) -> Observation {
        Observation {
            day: state.t,
            date: self.frame.dates()[state.t],
            window: state.window.clone(),
            weights: state.weights.clone(),
        }
    }

    pub fn step(&self, state: &EnvState, action: &WeightVector) -> Result<StepOutcome, EnvError> {
        if action.len() != self.action_dim() {
            return Err(EnvError::InvalidAction(format!(
                "expected {} weights, got {}",
                self.action_dim(),
                action.len()
            )));
        }
        // revalidate: the vector may have been built outside `new`
        WeightVector::new(action.as_slice().to_vec())?;
        let t = state.t;
        if t + 1 >= self.frame.len() {
            return Err(EnvError::EpisodeFinished);
        }
        let mut asset_returns = Vec::with_capacity(self.action_dim());
        if self.config.include_cash {
            asset_returns.push(0.0);
        }
        for a in 0..self.frame.num_assets() {
            asset_returns.push(self.frame.close(a, t + 1) / self.frame.close(a, t) - 1.0);
        }
        let gross: f64 = action.as_slice().iter().zip(&asset_returns).map(|(w, r)| w * r).sum();
        let cost = self.config.cost_rate * action.turnover(&state.weights);
        let net = gross - cost;
        let value = state.value * (1.0 + net);
        if !(value > 0.0) {
            return Err(EnvError::Bankrupt { value });
        }
        let (reward, dsr) = match self.config.reward_kind {
            RewardKind::LogReturn => (reward_log(state.value, value)?, state.dsr),
            RewardKind::Dsr => reward_dsr(state.dsr, net, self.config.dsr_eta),
        };
        let next = EnvState {
            t: t + 1,
            window: make_window(&self.features, t + 1, self.config.window)?,
            weights: action.clone(),
            value,
            dsr,
        };
        let info = StepInfo {
            date: self.frame.dates()[t + 1],
            weights: action.clone(),
            gross_return: gross,
            cost,
            net_return: net,
            asset_returns,
            value,
            reward,
        };
        Ok(StepOutcome { done: t + 2 == self.frame.len(), state: next, reward, info })
    }
}
