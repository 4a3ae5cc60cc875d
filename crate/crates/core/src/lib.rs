//! Portfolio allocation engine core.
//!
//! Everything in this crate is pure computation over in-memory data and
//! builds without `std` (an allocator is required). File formats, the
//! command-line driver and checkpoint serialization live in the `folio`
//! companion crate.
//!
//! Layout:
//! - [`data`]: OHLCV bars, date alignment, train/test split, standardized
//!   log-difference features and rolling windows.
//! - [`nn`]: dense tensors, a tape-based reverse-mode autodiff graph, the
//!   dense / LSTM / softmax / tanh-Gaussian layers and Adam.
//! - [`env`]: the daily rebalancing simulator with proportional costs.
//! - [`agent`]: the shared agent contract plus DDPG, SAC and the
//!   mean-variance benchmark.
//! - [`markowitz`]: moment estimation and the long-only QP.
//! - [`metrics`]: Sharpe, Sortino, drawdown, VaR/CVaR, Calmar, utility.
//! - [`forecast`]: the supervised next-day return forecaster.
//! - [`runner`]: training and backtest loops.
//! - [`synth`]: synthetic OHLCV series.
#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod agent;
pub mod data;
pub mod env;
pub mod forecast;
pub mod linalg;
pub mod markowitz;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod runner;
pub mod synth;

mod math;

pub use chrono::NaiveDate;
