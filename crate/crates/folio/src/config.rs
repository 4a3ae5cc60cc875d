//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored, every key may appear once and
//! unknown keys are errors. Only `tickers` is required.

use std::path::PathBuf;

use folio_core::agent::{AgentKind, DdpgConfig, MptConfig, NetConfig, SacConfig};
use folio_core::env::{EnvConfig, RewardKind};
use folio_core::forecast::ForecastConfig;
use folio_core::metrics::ReportSettings;
use folio_core::NaiveDate;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` is set twice")]
    DuplicateKey { line: usize, key: String },
    #[error("`{0}` is required")]
    MissingKey(&'static str),
    #[error("`{key}`: cannot use {value:?}: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tickers: Vec<String>,
    /// Holds one `<ticker>.csv` per asset.
    pub data_dir: PathBuf,
    /// Last day of the training split.
    pub train_end: NaiveDate,
    pub agent: AgentKind,
    pub seed: u64,
    pub out_dir: PathBuf,

    pub window: usize,
    pub cost_rate: f64,
    pub include_cash: bool,
    pub reward: RewardKind,
    pub dsr_eta: f64,
    pub initial_value: f64,
    pub volume_eps: f64,

    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub initial_alpha: f64,
    pub learn_alpha: bool,
    /// `None` uses minus the number of portfolio slots.
    pub target_entropy: Option<f64>,
    pub sac_action_scale: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub hidden: usize,
    pub lstm_layers: usize,
    pub leaky_slope: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    pub ou_mu: f64,
    pub ou_dt: f64,

    pub mpt_lookback: usize,
    pub mpt_lambda: f64,

    pub risk_free: f64,
    pub periods_per_year: f64,
    pub utility_lambda: f64,

    pub forecast_epochs: usize,
    pub forecast_batch_size: usize,
    pub forecast_lr: f64,
    pub forecast_validation: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tickers: Vec::new(),
            data_dir: PathBuf::from("data"),
            train_end: NaiveDate::from_ymd_opt(2022, 12, 31).expect("valid date"),
            agent: AgentKind::Sac,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            window: 50,
            cost_rate: 0.001,
            include_cash: false,
            reward: RewardKind::LogReturn,
            dsr_eta: 0.01,
            initial_value: 1.0,
            volume_eps: 1.0,
            gamma: 0.99,
            tau: 1e-3,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 1e-3,
            initial_alpha: 1.0,
            learn_alpha: true,
            target_entropy: None,
            sac_action_scale: 5.0,
            batch_size: 64,
            buffer_capacity: 100_000,
            hidden: 64,
            lstm_layers: 3,
            leaky_slope: 0.01,
            episodes: 1000,
            steps_per_episode: 10_000,
            ou_theta: 0.2,
            ou_sigma: 0.3,
            ou_mu: 0.0,
            ou_dt: 1.0,
            mpt_lookback: 60,
            mpt_lambda: 1.0,
            risk_free: 0.0,
            periods_per_year: 365.0,
            utility_lambda: 1.0,
            forecast_epochs: 1000,
            forecast_batch_size: 128,
            forecast_lr: 3e-4,
            forecast_validation: 0.1,
        }
    }
}

fn invalid(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::InvalidValue { key: key.to_string(), value: value.to_string(), reason: reason.to_string() }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| invalid(key, value, e))
}

fn flag(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(invalid(key, value, "expected true or false")),
    }
}

fn reward_name(r: RewardKind) -> &'static str {
    match r {
        RewardKind::LogReturn => "log_return",
        RewardKind::Dsr => "dsr",
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            if seen.iter().any(|k| k == key) {
                return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
            }
            cfg.set(key, value).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line, key },
                other => other,
            })?;
            seen.push(key.to_string());
        }
        if cfg.tickers.is_empty() {
            return Err(ConfigError::MissingKey("tickers"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Assigns one key; also used for command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "tickers" => {
                self.tickers = value.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect();
                if self.tickers.is_empty() {
                    return Err(invalid(key, value, "no tickers listed"));
                }
                let mut sorted = self.tickers.clone();
                sorted.sort();
                sorted.dedup();
                if sorted.len() != self.tickers.len() {
                    return Err(invalid(key, value, "tickers repeat"));
                }
            }
            "data_dir" => self.data_dir = PathBuf::from(value),
            "train_end" => {
                self.train_end = NaiveDate::parse_from_str(value, "%Y-%m-%d").map_err(|e| invalid(key, value, e))?
            }
            "agent" => {
                self.agent = AgentKind::parse(value).ok_or_else(|| invalid(key, value, "expected ddpg, sac or mpt"))?
            }
            "seed" => self.seed = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "window" => self.window = num(key, value)?,
            "cost_rate" => self.cost_rate = num(key, value)?,
            "include_cash" => self.include_cash = flag(key, value)?,
            "reward" => {
                self.reward = match value {
                    "log_return" => RewardKind::LogReturn,
                    "dsr" => RewardKind::Dsr,
                    _ => return Err(invalid(key, value, "expected log_return or dsr")),
                }
            }
            "dsr_eta" => self.dsr_eta = num(key, value)?,
            "initial_value" => self.initial_value = num(key, value)?,
            "volume_eps" => self.volume_eps = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "actor_lr" => self.actor_lr = num(key, value)?,
            "critic_lr" => self.critic_lr = num(key, value)?,
            "alpha_lr" => self.alpha_lr = num(key, value)?,
            "initial_alpha" => self.initial_alpha = num(key, value)?,
            "learn_alpha" => self.learn_alpha = flag(key, value)?,
            "target_entropy" => self.target_entropy = if value == "auto" { None } else { Some(num(key, value)?) },
            "sac_action_scale" => self.sac_action_scale = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "buffer_capacity" => self.buffer_capacity = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "lstm_layers" => self.lstm_layers = num(key, value)?,
            "leaky_slope" => self.leaky_slope = num(key, value)?,
            "episodes" => self.episodes = num(key, value)?,
            "steps_per_episode" => self.steps_per_episode = num(key, value)?,
            "ou_theta" => self.ou_theta = num(key, value)?,
            "ou_sigma" => self.ou_sigma = num(key, value)?,
            "ou_mu" => self.ou_mu = num(key, value)?,
            "ou_dt" => self.ou_dt = num(key, value)?,
            "mpt_lookback" => self.mpt_lookback = num(key, value)?,
            "mpt_lambda" => self.mpt_lambda = num(key, value)?,
            "risk_free" => self.risk_free = num(key, value)?,
            "periods_per_year" => self.periods_per_year = num(key, value)?,
            "utility_lambda" => self.utility_lambda = num(key, value)?,
            "forecast_epochs" => self.forecast_epochs = num(key, value)?,
            "forecast_batch_size" => self.forecast_batch_size = num(key, value)?,
            "forecast_lr" => self.forecast_lr = num(key, value)?,
            "forecast_validation" => self.forecast_validation = num(key, value)?,
            _ => return Err(ConfigError::UnknownKey { line: 0, key: key.to_string() }),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("tickers", self.tickers.join(",")),
            ("data_dir", self.data_dir.display().to_string()),
            ("train_end", self.train_end.format("%Y-%m-%d").to_string()),
            ("agent", self.agent.name().to_string()),
            ("seed", self.seed.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("window", self.window.to_string()),
            ("cost_rate", self.cost_rate.to_string()),
            ("include_cash", self.include_cash.to_string()),
            ("reward", reward_name(self.reward).to_string()),
            ("dsr_eta", self.dsr_eta.to_string()),
            ("initial_value", self.initial_value.to_string()),
            ("volume_eps", self.volume_eps.to_string()),
            ("gamma", self.gamma.to_string()),
            ("tau", self.tau.to_string()),
            ("actor_lr", self.actor_lr.to_string()),
            ("critic_lr", self.critic_lr.to_string()),
            ("alpha_lr", self.alpha_lr.to_string()),
            ("initial_alpha", self.initial_alpha.to_string()),
            ("learn_alpha", self.learn_alpha.to_string()),
            ("target_entropy", self.target_entropy.map_or("auto".to_string(), |h| h.to_string())),
            ("sac_action_scale", self.sac_action_scale.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("buffer_capacity", self.buffer_capacity.to_string()),
            ("hidden", self.hidden.to_string()),
            ("lstm_layers", self.lstm_layers.to_string()),
            ("leaky_slope", self.leaky_slope.to_string()),
            ("episodes", self.episodes.to_string()),
            ("steps_per_episode", self.steps_per_episode.to_string()),
            ("ou_theta", self.ou_theta.to_string()),
            ("ou_sigma", self.ou_sigma.to_string()),
            ("ou_mu", self.ou_mu.to_string()),
            ("ou_dt", self.ou_dt.to_string()),
            ("mpt_lookback", self.mpt_lookback.to_string()),
            ("mpt_lambda", self.mpt_lambda.to_string()),
            ("risk_free", self.risk_free.to_string()),
            ("periods_per_year", self.periods_per_year.to_string()),
            ("utility_lambda", self.utility_lambda.to_string()),
            ("forecast_epochs", self.forecast_epochs.to_string()),
            ("forecast_batch_size", self.forecast_batch_size.to_string()),
            ("forecast_lr", self.forecast_lr.to_string()),
            ("forecast_validation", self.forecast_validation.to_string()),
        ]
    }

    /// Config text that parses back to `self`.
    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 over every entry except `out_dir`, so a run directory can
    /// be moved without invalidating its checkpoint.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries().iter().filter(|(k, _)| *k != "out_dir") {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn csv_path(&self, ticker: &str) -> PathBuf {
        self.data_dir.join(format!("{ticker}.csv"))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let wrap = |key: &str, e: &dyn std::fmt::Display| invalid(key, "", e);
        self.env_config().validate().map_err(|e| wrap("environment", &e))?;
        let net = self.net_config();
        net.validate().map_err(|e| wrap("network", &e))?;
        self.ddpg_config().validate().map_err(|e| wrap("ddpg", &e))?;
        self.sac_config().validate().map_err(|e| wrap("sac", &e))?;
        if self.mpt_lookback < 2 {
            return Err(invalid("mpt_lookback", &self.mpt_lookback.to_string(), "at least 2 days"));
        }
        if self.episodes == 0 || self.steps_per_episode == 0 {
            return Err(invalid("episodes", &self.episodes.to_string(), "episodes and steps must be positive"));
        }
        if !(0.0..1.0).contains(&self.forecast_validation) {
            return Err(invalid("forecast_validation", &self.forecast_validation.to_string(), "must lie in [0, 1)"));
        }
        if self.forecast_epochs == 0 || self.forecast_batch_size == 0 {
            return Err(invalid(
                "forecast_epochs",
                &self.forecast_epochs.to_string(),
                "epochs and batch must be positive",
            ));
        }
        if !(self.volume_eps > 0.0) {
            return Err(invalid("volume_eps", &self.volume_eps.to_string(), "must be positive"));
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            cost_rate: self.cost_rate,
            window: self.window,
            include_cash: self.include_cash,
            reward_kind: self.reward,
            dsr_eta: self.dsr_eta,
            initial_value: self.initial_value,
            discount: self.gamma,
        }
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            assets: self.tickers.len(),
            include_cash: self.include_cash,
            window_steps: self.window.saturating_sub(1),
            hidden: self.hidden,
            lstm_layers: self.lstm_layers,
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn ddpg_config(&self) -> DdpgConfig {
        DdpgConfig {
            gamma: self.gamma,
            tau: self.tau,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            batch_size: self.batch_size,
            buffer_capacity: self.buffer_capacity,
            ou_theta: self.ou_theta,
            ou_sigma: self.ou_sigma,
            ou_mu: self.ou_mu,
            ou_dt: self.ou_dt,
            ..DdpgConfig::new(self.net_config())
        }
    }

    pub fn sac_config(&self) -> SacConfig {
        SacConfig {
            gamma: self.gamma,
            tau: self.tau,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            alpha_lr: self.alpha_lr,
            initial_alpha: self.initial_alpha,
            learn_alpha: self.learn_alpha,
            action_scale: self.sac_action_scale,
            target_entropy: self.target_entropy,
            batch_size: self.batch_size,
            buffer_capacity: self.buffer_capacity,
            ..SacConfig::new(self.net_config())
        }
    }

    pub fn mpt_config(&self) -> MptConfig {
        MptConfig { lookback: self.mpt_lookback, lambda: self.mpt_lambda, include_cash: self.include_cash }
    }

    pub fn report_settings(&self) -> ReportSettings {
        ReportSettings {
            risk_free: self.risk_free,
            periods_per_year: self.periods_per_year,
            utility_lambda: self.utility_lambda,
            ..ReportSettings::default()
        }
    }

    pub fn forecast_config(&self) -> ForecastConfig {
        ForecastConfig {
            batch_size: self.forecast_batch_size,
            epochs: self.forecast_epochs,
            lr: self.forecast_lr,
            validation_fraction: self.forecast_validation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_keys() {
        let cfg = RunConfig::parse("# assets\ntickers = BTC, ETH\n\nagent = ddpg # inline\n").unwrap();
        assert_eq!(cfg.tickers, ["BTC", "ETH"]);
        assert_eq!(cfg.agent, AgentKind::Ddpg);
        assert_eq!(cfg.window, 50);
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.episodes, 1000);
        assert_eq!(cfg.csv_path("BTC"), PathBuf::from("data/BTC.csv"));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::parse("tickers = A\nwindw = 5\n"), Err(ConfigError::UnknownKey { line: 2, .. })));
        assert!(matches!(
            RunConfig::parse("tickers = A\ntickers = B\n"),
            Err(ConfigError::DuplicateKey { line: 2, .. })
        ));
        assert_eq!(RunConfig::parse("window = 5\n"), Err(ConfigError::MissingKey("tickers")));
        assert!(matches!(RunConfig::parse("tickers = A\nwindow 5\n"), Err(ConfigError::Syntax { line: 2 })));
        assert!(matches!(RunConfig::parse("tickers = A\nwindow = 1\n"), Err(ConfigError::InvalidValue { .. })));
        assert!(matches!(RunConfig::parse("tickers = A\nagent = ppo\n"), Err(ConfigError::InvalidValue { .. })));
        assert!(matches!(RunConfig::parse("tickers = A,A\n"), Err(ConfigError::InvalidValue { .. })));
    }

    #[test]
    fn text_roundtrip_and_hash() {
        let mut cfg =
            RunConfig::parse("tickers = A,B\nreward = dsr\ntarget_entropy = -1.5\ncost_rate = 0.0025\n").unwrap();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        let h = cfg.hash();
        cfg.out_dir = PathBuf::from("elsewhere");
        assert_eq!(cfg.hash(), h);
        cfg.seed = 7;
        assert_ne!(cfg.hash(), h);
    }
}
