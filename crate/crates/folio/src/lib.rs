//! Batch driver around `folio-core`.
//!
//! A run directory collects the output of each stage: `ingest` writes the
//! aligned frame and feature statistics, `train` a checkpoint and episode
//! log, `backtest` a per-day trace with a metrics report, `forecast` the
//! supervised diagnostic. `report` merges finished backtests from several
//! run directories into one comparison table.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use folio_core::agent::AgentError;
use folio_core::data::DataError;
use folio_core::env::EnvError;
use folio_core::forecast::ForecastError;
use folio_core::nn::NnError;
use folio_core::runner::RunError;
use thiserror::Error;

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod csv_io;

pub use config::{ConfigError, RunConfig};
pub use csv_io::{load_ohlcv_csv, IngestError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{} is missing; run the earlier stage first", .0.display())]
    MissingArtifact(PathBuf),
    #[error("unreadable artifact: {0}")]
    Corrupt(String),
    #[error("checkpoint was trained with config {found}, current config is {expected}")]
    ChecksumMismatch { expected: String, found: String },
    #[error("checkpoint is incomplete (stopped after {episodes} episodes)")]
    IncompleteCheckpoint { episodes: usize },
    #[error("none of the given directories holds a finished backtest")]
    NoCompletedRuns,
    #[error("ingested frame covers {found:?}, config lists {expected:?}")]
    AssetMismatch { expected: Vec<String>, found: Vec<String> },
}
