//! Synthetic daily OHLCV series for tests and demos.

use alloc::string::String;
use alloc::vec::Vec;

use chrono::{Days, NaiveDate};

use crate::data::OhlcvBar;
use crate::math;
use crate::rng::{seeded, standard_normal, uniform};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthAsset {
    pub name: String,
    pub start_price: f64,
    /// Deterministic daily close log-drift.
    pub drift: f64,
    /// Std of the daily close log-noise.
    pub volatility: f64,
}

impl SynthAsset {
    pub fn new(name: &str, drift: f64, volatility: f64) -> Self {
        Self { name: name.into(), start_price: 100.0, drift, volatility }
    }
}

/// Closes follow `ln c' = ln c + drift + volatility·ε`. Opens sit at the
/// previous close, highs and lows bracket both with a random spread, and
/// volumes are log-normal.
pub fn generate(assets: &[SynthAsset], start: NaiveDate, days: usize, seed: u64) -> Vec<(String, Vec<OhlcvBar>)> {
    let mut rng = seeded(seed);
    assets
        .iter()
        .map(|a| {
            let mut bars = Vec::with_capacity(days);
            let mut close = a.start_price;
            for d in 0..days {
                let open = close;
                close = open * math::exp(a.drift + a.volatility * standard_normal(&mut rng));
                let hi = open.max(close) * (1.0 + uniform(&mut rng, 0.0, 0.01));
                let lo = open.min(close) * (1.0 - uniform(&mut rng, 0.0, 0.01));
                let volume = 1e6 * math::exp(0.3 * standard_normal(&mut rng));
                bars.push(OhlcvBar { date: start + Days::new(d as u64), open, high: hi, low: lo, close, volume });
            }
            (a.name.clone(), bars)
        })
        .collect()
}
