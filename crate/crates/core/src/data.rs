//! Market data: bars, aligned frames, log-difference features and windows.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use chrono::NaiveDate;
use thiserror::Error;

use crate::math;

/// Number of per-bar channels (open, high, low, close, volume).
pub const CHANNELS: usize = 5;

/// Index of the close channel inside a feature step.
pub const CLOSE: usize = 3;

pub const CHANNEL_NAMES: [&str; CHANNELS] = ["open", "high", "low", "close", "volume"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OhlcvBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum BarViolation {
    #[error("field {0} is not finite")]
    NonFinite(&'static str),
    #[error("low price must be strictly positive")]
    NonPositiveLow,
    #[error("high is below low")]
    HighBelowLow,
    #[error("open lies outside [low, high]")]
    OpenOutOfRange,
    #[error("close lies outside [low, high]")]
    CloseOutOfRange,
    #[error("volume is negative")]
    NegativeVolume,
}

impl OhlcvBar {
    pub fn channel(&self, c: usize) -> f64 {
        match c {
            0 => self.open,
            1 => self.high,
            2 => self.low,
            3 => self.close,
            4 => self.volume,
            _ => panic!("channel index {c} out of range"),
        }
    }

    pub fn validate(&self) -> Result<(), BarViolation> {
        for (c, name) in CHANNEL_NAMES.iter().enumerate() {
            if !self.channel(c).is_finite() {
                return Err(BarViolation::NonFinite(name));
            }
        }
        if self.low <= 0.0 {
            return Err(BarViolation::NonPositiveLow);
        }
        if self.high < self.low {
            return Err(BarViolation::HighBelowLow);
        }
        if self.open < self.low || self.open > self.high {
            return Err(BarViolation::OpenOutOfRange);
        }
        if self.close < self.low || self.close > self.high {
            return Err(BarViolation::CloseOutOfRange);
        }
        if self.volume < 0.0 {
            return Err(BarViolation::NegativeVolume);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("no date is common to every asset")]
    EmptyIntersection,
    #[error("asset {asset} has {len} bars, at least {needed} are required")]
    TooShort { asset: String, len: usize, needed: usize },
    #[error("aligned frame has {len} days, at least {needed} are required")]
    IntersectionTooShort { len: usize, needed: usize },
    #[error("split date {0} is not inside the frame's date range")]
    DateOutOfRange(NaiveDate),
    #[error("non-positive {channel} price for {asset} on {date}")]
    NonPositivePrice { asset: String, date: NaiveDate, channel: &'static str },
    #[error("asset {asset} channel {channel} has zero dispersion on the fitting data")]
    DegenerateChannel { asset: usize, channel: &'static str },
    #[error("window ending at day {t} needs {needed} log-difference steps")]
    IndexTooEarly { t: usize, needed: usize },
    #[error("day {t} is beyond the last feature step")]
    IndexOutOfRange { t: usize },
    #[error("window size must be at least 2, got {0}")]
    InvalidWindow(usize),
    #[error("feature array has {got} assets, statistics cover {expected}")]
    AssetCountMismatch { expected: usize, got: usize },
    #[error("frame layout is inconsistent: {0}")]
    Inconsistent(&'static str),
    #[error("cannot fit statistics on an empty feature array")]
    Empty,
}

/// Daily bars of several assets on one shared date axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketFrame {
    assets: Vec<String>,
    dates: Vec<NaiveDate>,
    // bars[asset][day]
    bars: Vec<Vec<OhlcvBar>>,
}

impl MarketFrame {
    pub fn new(assets: Vec<String>, bars: Vec<Vec<OhlcvBar>>) -> Result<Self, DataError> {
        if assets.is_empty() || assets.len() != bars.len() {
            return Err(DataError::Inconsistent("asset list and bar grid differ"));
        }
        let dates: Vec<NaiveDate> = bars[0].iter().map(|b| b.date).collect();
        for series in &bars {
            if series.len() != dates.len() {
                return Err(DataError::Inconsistent("ragged bar grid"));
            }
            if series.iter().zip(&dates).any(|(b, d)| b.date != *d) {
                return Err(DataError::Inconsistent("date axes differ between assets"));
            }
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::Inconsistent("dates are not strictly increasing"));
        }
        Ok(Self { assets, dates, bars })
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn num_assets(&self) -> usize {
        self.assets.len()
    }

    /// Number of days T.
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn bars(&self, asset: usize) -> &[OhlcvBar] {
        &self.bars[asset]
    }

    pub fn bar(&self, asset: usize, day: usize) -> &OhlcvBar {
        &self.bars[asset][day]
    }

    pub fn close(&self, asset: usize, day: usize) -> f64 {
        self.bars[asset][day].close
    }

    /// Position of `date` on the axis, if present.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Days `start..end` as a new frame.
    pub fn slice(&self, start: usize, end: usize) -> MarketFrame {
        MarketFrame {
            assets: self.assets.clone(),
            dates: self.dates[start..end].to_vec(),
            bars: self.bars.iter().map(|s| s[start..end].to_vec()).collect(),
        }
    }
}

/// Restricts every series to the dates they all share, keeping input order.
pub fn align_frames(series: Vec<(String, Vec<OhlcvBar>)>, window: usize) -> Result<MarketFrame, DataError> {
    if window < 2 {
        return Err(DataError::InvalidWindow(window));
    }
    if series.is_empty() {
        return Err(DataError::Inconsistent("no assets given"));
    }
    let needed = window + 1;
    for (asset, bars) in &series {
        if bars.len() < needed {
            return Err(DataError::TooShort { asset: asset.clone(), len: bars.len(), needed });
        }
    }
    let mut common: Vec<NaiveDate> = series[0].1.iter().map(|b| b.date).collect();
    for (_, bars) in &series[1..] {
        common.retain(|d| bars.binary_search_by(|b| b.date.cmp(d)).is_ok());
    }
    if common.is_empty() {
        return Err(DataError::EmptyIntersection);
    }
    if common.len() < needed {
        return Err(DataError::IntersectionTooShort { len: common.len(), needed });
    }
    let mut assets = Vec::with_capacity(series.len());
    let mut grid = Vec::with_capacity(series.len());
    for (asset, bars) in series {
        let kept: Vec<OhlcvBar> = bars.into_iter().filter(|b| common.binary_search(&b.date).is_ok()).collect();
        assets.push(asset);
        grid.push(kept);
    }
    MarketFrame::new(assets, grid)
}

/// Splits into the days `<= train_end` and the remainder.
pub fn split_by_date(frame: &MarketFrame, train_end: NaiveDate) -> Result<(MarketFrame, MarketFrame), DataError> {
    let dates = frame.dates();
    let (first, last) = match (dates.first(), dates.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(DataError::DateOutOfRange(train_end)),
    };
    if train_end < first || train_end >= last {
        return Err(DataError::DateOutOfRange(train_end));
    }
    let cut = dates.partition_point(|d| *d <= train_end);
    Ok((frame.slice(0, cut), frame.slice(cut, frame.len())))
}

/// Dense `[asset][step][channel]` array of (standardized or raw) log-differences.
///
/// Step `s` holds the change from day `s` to day `s + 1` of the source frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureArray {
    assets: usize,
    steps: usize,
    data: Vec<f64>,
}

impl FeatureArray {
    pub fn from_vec(assets: usize, steps: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), assets * steps * CHANNELS, "feature array length");
        Self { assets, steps, data }
    }

    pub fn assets(&self) -> usize {
        self.assets
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, asset: usize, step: usize, channel: usize) -> f64 {
        self.data[(asset * self.steps + step) * CHANNELS + channel]
    }

    /// All steps of one asset, `steps * CHANNELS` values.
    pub fn asset_row(&self, asset: usize) -> &[f64] {
        let n = self.steps * CHANNELS;
        &self.data[asset * n..(asset + 1) * n]
    }
}

/// Channel-wise `ln(x[t+1] / x[t])`; volume uses `ln((v[t+1] + eps) / (v[t] + eps))`.
pub fn compute_log_diffs(frame: &MarketFrame, volume_eps: f64) -> Result<FeatureArray, DataError> {
    let m = frame.num_assets();
    let t = frame.len();
    let steps = t.saturating_sub(1);
    let mut data = Vec::with_capacity(m * steps * CHANNELS);
    for a in 0..m {
        let bars = frame.bars(a);
        for bar in bars {
            for (c, &channel) in CHANNEL_NAMES[..4].iter().enumerate() {
                if !(bar.channel(c) > 0.0) {
                    return Err(DataError::NonPositivePrice {
                        asset: frame.assets()[a].clone(),
                        date: bar.date,
                        channel,
                    });
                }
            }
        }
        for w in bars.windows(2) {
            for c in 0..4 {
                data.push(math::ln(w[1].channel(c) / w[0].channel(c)));
            }
            data.push(math::ln((w[1].volume + volume_eps) / (w[0].volume + volume_eps)));
        }
    }
    Ok(FeatureArray { assets: m, steps, data })
}

/// Per-asset, per-channel location and scale fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    mean: Vec<[f64; CHANNELS]>,
    std: Vec<[f64; CHANNELS]>,
}

const MIN_STD: f64 = 1e-12;

impl FeatureStats {
    pub fn from_parts(mean: Vec<[f64; CHANNELS]>, std: Vec<[f64; CHANNELS]>) -> Result<Self, DataError> {
        if mean.len() != std.len() {
            return Err(DataError::AssetCountMismatch { expected: mean.len(), got: std.len() });
        }
        for (a, s) in std.iter().enumerate() {
            for (c, v) in s.iter().enumerate() {
                if !(*v > MIN_STD) {
                    return Err(DataError::DegenerateChannel { asset: a, channel: CHANNEL_NAMES[c] });
                }
            }
        }
        Ok(Self { mean, std })
    }

    pub fn mean(&self) -> &[[f64; CHANNELS]] {
        &self.mean
    }

    pub fn std(&self) -> &[[f64; CHANNELS]] {
        &self.std
    }
}

/// Sample mean and sample standard deviation (n - 1) of every asset/channel.
pub fn fit_stats(train: &FeatureArray) -> Result<FeatureStats, DataError> {
    if train.steps < 2 {
        return Err(DataError::Empty);
    }
    let n = train.steps as f64;
    let mut mean = Vec::with_capacity(train.assets);
    let mut std = Vec::with_capacity(train.assets);
    for a in 0..train.assets {
        let mut mu = [0.0; CHANNELS];
        let mut sd = [0.0; CHANNELS];
        for c in 0..CHANNELS {
            let sum: f64 = (0..train.steps).map(|s| train.get(a, s, c)).sum();
            let m = sum / n;
            let ss: f64 = (0..train.steps)
                .map(|s| {
                    let d = train.get(a, s, c) - m;
                    d * d
                })
                .sum();
            mu[c] = m;
            sd[c] = math::sqrt(ss / (n - 1.0));
        }
        mean.push(mu);
        std.push(sd);
    }
    FeatureStats::from_parts(mean, std)
}

pub fn standardize(diffs: &FeatureArray, stats: &FeatureStats) -> Result<FeatureArray, DataError> {
    if diffs.assets != stats.mean.len() {
        return Err(DataError::AssetCountMismatch { expected: stats.mean.len(), got: diffs.assets });
    }
    let mut data = Vec::with_capacity(diffs.data.len());
    for a in 0..diffs.assets {
        for s in 0..diffs.steps {
            for c in 0..CHANNELS {
                data.push((diffs.get(a, s, c) - stats.mean[a][c]) / stats.std[a][c]);
            }
        }
    }
    Ok(FeatureArray { assets: diffs.assets, steps: diffs.steps, data })
}

/// The trailing `window - 1` feature steps that are observable at the close
/// of day `end_day`, shared by reference with the underlying array.
#[derive(Debug, Clone)]
pub struct FeatureWindow {
    source: Arc<FeatureArray>,
    end_day: usize,
    len: usize,
}

impl FeatureWindow {
    /// Day index of the last observed close.
    pub fn end_day(&self) -> usize {
        self.end_day
    }

    /// Number of log-difference steps (window size minus one).
    pub fn steps(&self) -> usize {
        self.len
    }

    pub fn assets(&self) -> usize {
        self.source.assets
    }

    fn first_step(&self) -> usize {
        self.end_day - self.len
    }

    /// `steps() * CHANNELS` values for one asset, oldest step first.
    pub fn asset(&self, asset: usize) -> &[f64] {
        let row = self.source.asset_row(asset);
        &row[self.first_step() * CHANNELS..self.end_day * CHANNELS]
    }

    pub fn get(&self, asset: usize, step: usize, channel: usize) -> f64 {
        self.source.get(asset, self.first_step() + step, channel)
    }

    /// Copies out the `assets × steps × CHANNELS` values.
    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.assets()).flat_map(|a| self.asset(a).iter().copied()).collect()
    }
}

impl PartialEq for FeatureWindow {
    fn eq(&self, other: &Self) -> bool {
        self.end_day == other.end_day
            && self.len == other.len
            && (Arc::ptr_eq(&self.source, &other.source) || self.to_vec() == other.to_vec())
    }
}

/// Window of `window - 1` steps ending at day `t` (requires `t >= window - 1`).
pub fn make_window(features: &Arc<FeatureArray>, t: usize, window: usize) -> Result<FeatureWindow, DataError> {
    if window < 2 {
        return Err(DataError::InvalidWindow(window));
    }
    if t + 1 < window {
        return Err(DataError::IndexTooEarly { t, needed: window - 1 });
    }
    if t > features.steps {
        return Err(DataError::IndexOutOfRange { t });
    }
    Ok(FeatureWindow { source: Arc::clone(features), end_day: t, len: window - 1 })
}

/// Number of valid window end days for a frame of `days` days.
pub fn window_count(days: usize, window: usize) -> usize {
    (days + 1).saturating_sub(window)
}
