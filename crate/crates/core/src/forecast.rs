//! Supervised next-day close log-return forecaster on the same feature
//! extractor the agents use.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::agent::network::{extract, head_forward, init_extractor, init_head, NetConfig};
use crate::agent::AgentError;
use crate::data::{make_window, DataError, FeatureArray, FeatureWindow, MarketFrame};
use crate::math;
use crate::nn::{adam_step, AdamState, Binding, Graph, NnError, ParamSet, Var};
use crate::rng::FolioRng;

const HEAD_HIDDEN_LAYERS: usize = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForecastError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("predictions are {preds} values, targets {targets}")]
    ShapeMismatch { preds: usize, targets: usize },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSample {
    pub input: FeatureWindow,
    /// Close log-return of every asset from the window's last day to the next.
    pub target: Vec<f64>,
}

/// One sample per day `t` from `W − 1` to `T − 2`.
pub fn build_dataset(
    frame: &MarketFrame,
    features: &Arc<FeatureArray>,
    window: usize,
) -> Result<Vec<ForecastSample>, ForecastError> {
    let mut out = Vec::new();
    for t in window.saturating_sub(1)..frame.len().saturating_sub(1) {
        let input = make_window(features, t, window)?;
        let target = (0..frame.num_assets()).map(|a| math::ln(frame.close(a, t + 1) / frame.close(a, t))).collect();
        out.push(ForecastSample { input, target });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Trailing share of the samples held out for validation.
    pub validation_fraction: f64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self { batch_size: 128, epochs: 1000, lr: 3e-4, validation_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Forecaster {
    net: NetConfig,
    params: ParamSet,
    opt: AdamState,
}

impl Forecaster {
    /// `net.include_cash` is ignored: forecasts cover risky assets only.
    pub fn new(net: NetConfig, rng: &mut FolioRng) -> Result<Self, ForecastError> {
        let net = NetConfig { include_cash: false, ..net };
        net.validate()?;
        let mut params = ParamSet::new();
        init_extractor(&mut params, &net, rng)?;
        init_head(&mut params, "fc", net.feature_dim(), &[net.hidden; HEAD_HIDDEN_LAYERS], net.assets, rng)?;
        Ok(Self { opt: AdamState::new(&params), net, params })
    }

    pub fn net(&self) -> &NetConfig {
        &self.net
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, g: &mut Graph, b: &Binding, windows: &[&FeatureWindow]) -> Result<Var, ForecastError> {
        let f = extract(g, b, &self.net, windows)?;
        Ok(head_forward(g, b, &self.net, "fc", HEAD_HIDDEN_LAYERS, f)?)
    }

    /// Row-major `B × M` predictions.
    pub fn predict_batch(&self, windows: &[&FeatureWindow]) -> Result<Vec<f64>, ForecastError> {
        let mut g = Graph::new();
        let b = g.bind_frozen(&self.params);
        let out = self.forward(&mut g, &b, windows)?;
        Ok(g.value(out).to_vec())
    }

    pub fn predict(&self, window: &FeatureWindow) -> Result<Vec<f64>, ForecastError> {
        self.predict_batch(&[window])
    }

    /// Mean-RMSE of the model over `samples`.
    pub fn evaluate(&self, samples: &[&ForecastSample]) -> Result<f64, ForecastError> {
        let windows: Vec<&FeatureWindow> = samples.iter().map(|s| &s.input).collect();
        let preds = self.predict_batch(&windows)?;
        let targets: Vec<f64> = samples.iter().flat_map(|s| s.target.iter().copied()).collect();
        mean_rmse(&preds, &targets, self.net.assets)
    }

    fn train_step(&mut self, batch: &[&ForecastSample], lr: f64) -> Result<f64, ForecastError> {
        let windows: Vec<&FeatureWindow> = batch.iter().map(|s| &s.input).collect();
        let targets: Vec<f64> = batch.iter().flat_map(|s| s.target.iter().copied()).collect();
        let mut g = Graph::new();
        let b = g.bind(&self.params);
        let preds = self.forward(&mut g, &b, &windows)?;
        let t = g.constant(batch.len(), self.net.assets, targets)?;
        let loss = mean_rmse_loss(&mut g, preds, t)?;
        let value = g.scalar(loss)?;
        g.backward(loss)?.write(&b, &mut self.params)?;
        adam_step(&mut self.params, &mut self.opt, lr)?;
        Ok(value)
    }
}

/// `(1/M) Σ_i sqrt((1/N) Σ_t (y − ŷ)²)` over row-major `N × M` inputs.
pub fn mean_rmse(preds: &[f64], targets: &[f64], assets: usize) -> Result<f64, ForecastError> {
    if preds.len() != targets.len() || assets == 0 || preds.is_empty() || !preds.len().is_multiple_of(assets) {
        return Err(ForecastError::ShapeMismatch { preds: preds.len(), targets: targets.len() });
    }
    let n = preds.len() / assets;
    let mut total = 0.0;
    for i in 0..assets {
        let mse = (0..n)
            .map(|t| {
                let d = preds[t * assets + i] - targets[t * assets + i];
                d * d
            })
            .sum::<f64>()
            / n as f64;
        total += math::sqrt(mse);
    }
    Ok(total / assets as f64)
}

/// Graph version of [`mean_rmse`].
pub fn mean_rmse_loss(g: &mut Graph, preds: Var, targets: Var) -> Result<Var, NnError> {
    let d = g.sub(preds, targets)?;
    let sq = g.square(d);
    let per_asset = g.mean_rows(sq);
    let rmse = g.sqrt(per_asset);
    Ok(g.mean_all(rmse))
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Share of entries whose sign matches; a zero only matches a zero.
pub fn directional_accuracy(preds: &[f64], targets: &[f64]) -> Result<f64, ForecastError> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(ForecastError::ShapeMismatch { preds: preds.len(), targets: targets.len() });
    }
    let hits = preds.iter().zip(targets).filter(|(p, t)| sign(**p) == sign(**t)).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Minibatch Adam over the leading samples, validating on the trailing
/// `validation_fraction`. Losses are re-evaluated on the full splits after
/// every epoch.
pub fn train_forecaster(
    model: &mut Forecaster,
    data: &[ForecastSample],
    config: &ForecastConfig,
    rng: &mut FolioRng,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<Vec<EpochLoss>, ForecastError> {
    if data.is_empty() {
        return Err(ForecastError::EmptyDataset);
    }
    let held_out = (data.len() as f64 * config.validation_fraction) as usize;
    let (train, validation) = data.split_at(data.len() - held_out.min(data.len() - 1));
    let train: Vec<&ForecastSample> = train.iter().collect();
    let validation: Vec<&ForecastSample> = validation.iter().collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<&ForecastSample> = chunk.iter().map(|&i| train[i]).collect();
            model.train_step(&batch, config.lr)?;
        }
        let loss = EpochLoss {
            epoch,
            train: model.evaluate(&train)?,
            validation: if validation.is_empty() { None } else { Some(model.evaluate(&validation)?) },
        };
        on_epoch(&loss);
        curve.push(loss);
    }
    Ok(curve)
}
