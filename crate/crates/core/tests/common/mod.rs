#![allow(dead_code)]

use std::sync::Arc;

use folio_core::agent::{NetConfig, Transition};
use folio_core::data::{align_frames, compute_log_diffs, fit_stats, MarketFrame};
use folio_core::env::{EnvConfig, PortfolioEnv, WeightVector};
use folio_core::rng::{fill_standard_normal, FolioRng};
use folio_core::synth::{generate, SynthAsset};
use folio_core::NaiveDate;

pub fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()
}

/// `(drift, volatility)` per asset.
pub fn market(days: usize, assets: &[(f64, f64)], seed: u64) -> MarketFrame {
    let specs: Vec<SynthAsset> =
        assets.iter().enumerate().map(|(i, &(d, v))| SynthAsset::new(&format!("A{i}"), d, v)).collect();
    align_frames(generate(&specs, start(), days, seed), 2).unwrap()
}

/// Environment whose standardization is fitted on the frame itself.
pub fn env_for(frame: MarketFrame, config: EnvConfig) -> PortfolioEnv {
    let stats = fit_stats(&compute_log_diffs(&frame, 1.0).unwrap()).unwrap();
    PortfolioEnv::from_frame(frame, &stats, 1.0, config).unwrap()
}

pub fn small_net(assets: usize, window: usize, include_cash: bool) -> NetConfig {
    NetConfig { assets, include_cash, window_steps: window - 1, hidden: 6, lstm_layers: 2, leaky_slope: 0.01 }
}

pub fn random_weights(n: usize, rng: &mut FolioRng) -> WeightVector {
    let mut z = vec![0.0; n];
    fill_standard_normal(rng, &mut z);
    folio_core::env::action_from_logits(&z.iter().map(|x| 2.0 * x).collect::<Vec<_>>())
}

/// Transitions from rolling the environment with random actions.
pub fn rollout(env: &PortfolioEnv, steps: usize, rng: &mut FolioRng) -> Vec<Transition> {
    let mut out = Vec::new();
    let mut state = env.reset().unwrap();
    while out.len() < steps {
        let obs = env.observation(&state);
        let action = random_weights(env.action_dim(), rng);
        let step = env.step(&state, &action).unwrap();
        out.push(Transition {
            state: obs,
            action,
            reward: step.reward,
            next_state: env.observation(&step.state),
            done: step.done,
        });
        state = if step.done { env.reset().unwrap() } else { step.state };
    }
    out
}

pub fn shared<T>(x: T) -> Arc<T> {
    Arc::new(x)
}

use folio_core::nn::{Binding, Graph, ParamSet, Var};

/// Largest relative error between backprop and central differences
/// (h = 1e-5) over every scalar in `params`. `f` builds the loss from a
/// binding of `params`.
pub fn gradient_error(params: &ParamSet, f: &dyn Fn(&mut Graph, &Binding) -> Var) -> f64 {
    let eval = |p: &ParamSet| {
        let mut g = Graph::new();
        let b = g.bind_frozen(p);
        let out = f(&mut g, &b);
        g.scalar(out).unwrap()
    };
    let mut g = Graph::new();
    let b = g.bind(params);
    let out = f(&mut g, &b);
    let mut analytic = params.clone();
    g.backward(out).unwrap().write(&b, &mut analytic).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in &names {
        for k in 0..params.get(name).unwrap().len() {
            let mut p = params.clone();
            p.get_mut(name).unwrap().data_mut()[k] += h;
            let up = eval(&p);
            p.get_mut(name).unwrap().data_mut()[k] -= 2.0 * h;
            let down = eval(&p);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(name).unwrap().grad().unwrap()[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    worst
}
