mod common;

use common::*;
use folio_core::agent::ddpg::{DdpgAgent, DdpgConfig};
use folio_core::agent::mpt::{MptAgent, MptConfig};
use folio_core::agent::sac::{squash_to_simplex, SacAgent, SacConfig};
use folio_core::agent::{Agent, AgentError, ReplayBuffer, Transition};
use folio_core::env::{EnvConfig, WeightVector};
use folio_core::nn::{soft_update, Graph, ParamSet, Tensor};
use folio_core::rng::{fill_standard_normal, seeded};

const W: usize = 6;

fn ddpg(assets: usize, cash: bool, seed: u64) -> DdpgAgent {
    let mut cfg = DdpgConfig::new(small_net(assets, W, cash));
    cfg.batch_size = 8;
    DdpgAgent::new(cfg, &mut seeded(seed)).unwrap()
}

fn sac_config(assets: usize, cash: bool) -> SacConfig {
    let mut cfg = SacConfig::new(small_net(assets, W, cash));
    cfg.batch_size = 8;
    cfg
}

fn env(assets: usize, cash: bool) -> folio_core::env::PortfolioEnv {
    let frame = market(80, &vec![(0.0005, 0.02); assets], 11);
    env_for(frame, EnvConfig { window: W, include_cash: cash, ..EnvConfig::default() })
}

fn simplex_ok(w: &WeightVector) -> bool {
    let s: f64 = w.as_slice().iter().sum();
    (s - 1.0).abs() <= 1e-9 && w.as_slice().iter().all(|&x| x >= 0.0)
}

// ---------- replay ----------

#[test]
fn replay_is_fifo_at_capacity() {
    let e = env(2, false);
    let ts = rollout(&e, 4, &mut seeded(0));
    let mut buf = ReplayBuffer::new(3);
    for t in &ts {
        buf.push(t.clone());
    }
    assert_eq!(buf.len(), 3);
    let kept: Vec<&Transition> = buf.iter().collect();
    for (k, t) in kept.iter().zip(&ts[1..]) {
        assert_eq!(*k, t);
    }
}

#[test]
fn replay_sampling_needs_a_full_batch() {
    let e = env(2, false);
    let mut buf = ReplayBuffer::new(100);
    for t in rollout(&e, 10, &mut seeded(0)) {
        buf.push(t);
    }
    assert!(matches!(buf.sample(64, &mut seeded(1)), Err(AgentError::NotEnoughSamples { size: 10, batch: 64 })));
}

// ---------- soft update ----------

fn filled(v: f64) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert("a", Tensor::filled(vec![2, 3], v)).unwrap();
    p.insert("b", Tensor::filled(vec![4], v)).unwrap();
    p
}

#[test]
fn soft_update_examples() {
    let online = filled(1.0);
    let mut t = filled(0.0);
    soft_update(&mut t, &online, 1.0).unwrap();
    assert_eq!(t, online);
    let mut t = filled(0.0);
    soft_update(&mut t, &online, 0.0).unwrap();
    assert_eq!(t, filled(0.0));
    soft_update(&mut t, &online, 1e-3).unwrap();
    assert!(t.iter().all(|(_, x)| x.data().iter().all(|v| *v == 1e-3)));
    let mut other = ParamSet::new();
    other.insert("a", Tensor::zeros(vec![3, 2])).unwrap();
    assert!(soft_update(&mut other, &online, 0.5).is_err());
}

#[test]
fn soft_update_contracts() {
    let mut rng = seeded(4);
    let mut online = filled(0.0);
    online.iter_mut().for_each(|(_, t)| fill_standard_normal(&mut rng, t.data_mut()));
    let mut target = filled(0.0);
    let mut gap = target.max_abs_diff(&online);
    for tau in [0.01, 0.3, 0.9] {
        soft_update(&mut target, &online, tau).unwrap();
        let next = target.max_abs_diff(&online);
        assert!(next < gap);
        gap = next;
    }
}

// ---------- DDPG ----------

#[test]
fn ddpg_targets_start_equal() {
    let a = ddpg(2, false, 0);
    assert_eq!(a.actor(), a.target_actor());
    assert_eq!(a.critic(), a.target_critic());
}

#[test]
fn ddpg_eval_is_deterministic_and_fresh_policy_near_uniform() {
    let e = env(3, false);
    let mut a = ddpg(3, false, 1);
    let obs = e.observation(&e.reset().unwrap());
    let mut rng = seeded(9);
    let w1 = a.act(&obs, false, &mut rng).unwrap();
    let w2 = a.act(&obs, false, &mut rng).unwrap();
    assert_eq!(w1, w2);
    assert!(w1.as_slice().iter().all(|w| (w - 1.0 / 3.0).abs() < 0.1));
    for _ in 0..50 {
        let w = a.act(&obs, true, &mut rng).unwrap();
        assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn ddpg_targets_follow_the_formula() {
    let e = env(2, false);
    let mut ts = rollout(&e, 4, &mut seeded(2));
    let mut cfg = DdpgConfig::new(small_net(2, W, false));
    cfg.gamma = 0.0;
    let a = DdpgAgent::new(cfg, &mut seeded(3)).unwrap();
    let batch: Vec<&Transition> = ts.iter().collect();
    let y = a.critic_targets(&batch).unwrap();
    for (t, y) in ts.iter().zip(&y) {
        assert_eq!(*y, t.reward);
    }
    // done drops the bootstrap regardless of gamma
    let b = ddpg(2, false, 3);
    ts.iter_mut().for_each(|t| t.done = true);
    let batch: Vec<&Transition> = ts.iter().collect();
    let y = b.critic_targets(&batch).unwrap();
    for (t, y) in ts.iter().zip(&y) {
        assert_eq!(*y, t.reward);
    }
}

#[test]
fn ddpg_critic_regresses_to_fixed_target() {
    let e = env(2, false);
    let mut t = rollout(&e, 1, &mut seeded(5)).remove(0);
    t.reward = 0.05;
    let mut a = ddpg(2, false, 6);
    let batch = [&t];
    let y = a.critic_targets(&batch).unwrap()[0];
    for _ in 0..500 {
        a.critic_update(&batch).unwrap();
    }
    let q = a.q_values(&batch).unwrap()[0];
    assert!((q - y).abs() < 1e-3, "q {q} y {y}");
    assert_eq!(a.critic_targets(&batch).unwrap()[0], y);
}

#[test]
fn ddpg_actor_ascends_a_linear_critic() {
    let e = env(3, false);
    let ts = rollout(&e, 8, &mut seeded(7));
    let batch: Vec<&Transition> = ts.iter().collect();
    let mut a = ddpg(3, false, 8);
    let net = a.config().net;
    let c = [0.3, -0.5, 0.9];
    let offset = net.feature_dim() + net.slots();
    let hidden = net.hidden;
    {
        let p = a.critic_mut();
        for (_, t) in p.iter_mut().filter(|(n, _)| n.starts_with("v.")) {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let h0 = p.get_mut("v.h0.w").unwrap().data_mut();
        for (i, ci) in c.iter().enumerate() {
            h0[(offset + i) * hidden] = *ci;
        }
        p.get_mut("v.h0.b").unwrap().data_mut()[0] = 10.0;
        p.get_mut("v.h1.w").unwrap().data_mut()[0] = 1.0;
        p.get_mut("v.out.w").unwrap().data_mut()[0] = 1.0;
    }
    let score = |a: &mut DdpgAgent| -> f64 {
        let mut rng = seeded(0);
        ts.iter()
            .map(|t| {
                let w = a.act(&t.state, false, &mut rng).unwrap();
                w.as_slice().iter().zip(&c).map(|(x, y)| x * y).sum::<f64>()
            })
            .sum::<f64>()
    };
    let before = score(&mut a);
    a.actor_update(&batch).unwrap();
    let after = score(&mut a);
    assert!(after > before, "{before} -> {after}");
}

#[test]
fn ddpg_targets_lag_after_an_update() {
    let e = env(2, false);
    let mut a = ddpg(2, false, 9);
    let mut rng = seeded(10);
    for t in rollout(&e, 8, &mut rng) {
        a.observe(t);
    }
    assert!(a.ready());
    let rec = a.update(&mut rng).unwrap();
    assert!(rec.get("critic_loss").unwrap().is_finite());
    assert!(rec.get("actor_loss").unwrap().is_finite());
    assert_ne!(a.actor(), a.target_actor());
    assert_ne!(a.critic(), a.target_critic());
    assert!(a.actor().max_abs_diff(a.target_actor()) > 0.0);
}

#[test]
fn ddpg_update_needs_a_batch() {
    let mut a = ddpg(2, false, 1);
    assert!(!a.ready());
    assert!(matches!(a.update(&mut seeded(0)), Err(AgentError::NotEnoughSamples { .. })));
}

#[test]
fn ddpg_critic_gradient_matches_finite_differences() {
    use folio_core::agent::network::{stack_weights, ValueNet};
    let e = env(2, true);
    let ts = rollout(&e, 3, &mut seeded(12));
    let a = ddpg(2, true, 13);
    let net = a.config().net;
    let windows: Vec<_> = ts.iter().map(|t| &t.state.window).collect();
    let weights: Vec<_> = ts.iter().map(|t| &t.state.weights).collect();
    let actions: Vec<_> = ts.iter().map(|t| &t.action).collect();
    let y: Vec<f64> = ts.iter().map(|t| t.reward + 0.3).collect();
    let err = gradient_error(a.critic(), &|g: &mut Graph, b| {
        let act = stack_weights(g, &actions).unwrap();
        let q = ValueNet::forward(g, b, &net, &windows, &weights, Some(act)).unwrap();
        let t = g.constant(3, 1, y.clone()).unwrap();
        let d = g.sub(q, t).unwrap();
        let s = g.square(d);
        g.mean_all(s)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn ddpg_state_roundtrip() {
    let e = env(2, false);
    let mut a = ddpg(2, false, 14);
    let mut rng = seeded(15);
    for t in rollout(&e, 8, &mut rng) {
        a.observe(t);
    }
    a.update(&mut rng).unwrap();
    let saved = a.export_state();
    let mut b = ddpg(2, false, 99);
    b.import_state(&saved).unwrap();
    assert_eq!(a.actor(), b.actor());
    assert_eq!(b.export_state(), saved);
    let mut other = ddpg(3, false, 1);
    assert!(other.import_state(&saved).is_err());
}

// ---------- SAC ----------

#[test]
fn sac_collapsed_policy_is_uniform() {
    let w = squash_to_simplex(&[0.0; 4], 5.0);
    assert_eq!(w.as_slice(), &[0.25; 4]);
}

#[test]
fn sac_eval_is_deterministic() {
    let e = env(2, true);
    let mut a = SacAgent::new(sac_config(2, true), &mut seeded(0)).unwrap();
    let obs = e.observation(&e.reset().unwrap());
    let mut rng = seeded(1);
    assert_eq!(a.act(&obs, false, &mut rng).unwrap(), a.act(&obs, false, &mut rng).unwrap());
    for _ in 0..200 {
        assert!(simplex_ok(&a.act(&obs, true, &mut rng).unwrap()));
    }
}

#[test]
fn sac_zero_log_std_floor_collapses_to_mean() {
    // with log_std pinned to its floor, sampling returns the mean action
    let e = env(2, false);
    let mut a = SacAgent::new(sac_config(2, false), &mut seeded(2)).unwrap();
    {
        let p = a.actor_mut();
        let out_w = p.get_mut("pi.out.w").unwrap();
        out_w.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let out_b = p.get_mut("pi.out.b").unwrap().data_mut();
        out_b[2] = -40.0;
        out_b[3] = -40.0;
    }
    let obs = e.observation(&e.reset().unwrap());
    let mut rng = seeded(3);
    for _ in 0..20 {
        let w = a.act(&obs, true, &mut rng).unwrap();
        assert!(w.as_slice().iter().all(|x| (x - 0.5).abs() < 1e-7));
    }
}

#[test]
fn sac_gamma_zero_targets_are_rewards() {
    let e = env(2, false);
    let ts = rollout(&e, 5, &mut seeded(4));
    let mut cfg = sac_config(2, false);
    cfg.gamma = 0.0;
    let a = SacAgent::new(cfg, &mut seeded(5)).unwrap();
    let batch: Vec<&Transition> = ts.iter().collect();
    for (t, y) in ts.iter().zip(a.critic_targets(&batch).unwrap()) {
        assert_eq!(y, t.reward);
    }
}

#[test]
fn sac_twin_swap_symmetry() {
    let e = env(3, false);
    let ts = rollout(&e, 6, &mut seeded(6));
    let batch: Vec<&Transition> = ts.iter().collect();
    let mut a = SacAgent::new(sac_config(3, false), &mut seeded(7)).unwrap();
    let mut noise = vec![0.0; 6 * 3];
    fill_standard_normal(&mut seeded(8), &mut noise);
    let yv = a.value_targets(&batch, &noise).unwrap();
    let loss = a.actor_loss(&batch, &noise).unwrap();
    a.swap_critics();
    assert_eq!(a.value_targets(&batch, &noise).unwrap(), yv);
    assert_eq!(a.actor_loss(&batch, &noise).unwrap(), loss);
}

#[test]
fn sac_zero_temperature_reduces_actor_loss_to_negative_q() {
    let e = env(2, false);
    let ts = rollout(&e, 6, &mut seeded(9));
    let batch: Vec<&Transition> = ts.iter().collect();
    let mut cfg = sac_config(2, false);
    cfg.initial_alpha = 0.0;
    cfg.learn_alpha = false;
    let mut a = SacAgent::new(cfg, &mut seeded(10)).unwrap();
    let q1 = a.q1().clone();
    *a.q2_mut() = q1;
    let mut noise = vec![0.0; 12];
    fill_standard_normal(&mut seeded(11), &mut noise);
    let q: Vec<f64> = a.value_targets(&batch, &noise).unwrap();
    let mean_q = q.iter().sum::<f64>() / q.len() as f64;
    assert!((a.actor_loss(&batch, &noise).unwrap() + mean_q).abs() < 1e-12);
}

#[test]
fn sac_critics_regress_to_fixed_target() {
    let e = env(2, false);
    let mut t = rollout(&e, 1, &mut seeded(12)).remove(0);
    t.reward = -0.03;
    let mut a = SacAgent::new(sac_config(2, false), &mut seeded(13)).unwrap();
    let batch = [&t];
    let y = a.critic_targets(&batch).unwrap()[0];
    for _ in 0..500 {
        a.critic_update(&batch).unwrap();
    }
    let (q1, q2) = a.q_values(&batch).unwrap();
    assert!((q1[0] - y).abs() < 1e-3, "q1 {} y {y}", q1[0]);
    assert!((q2[0] - y).abs() < 1e-3, "q2 {} y {y}", q2[0]);
}

#[test]
fn sac_temperature_stays_positive_and_moves_with_entropy() {
    let e = env(2, false);
    let mut a = SacAgent::new(sac_config(2, false), &mut seeded(14)).unwrap();
    let mut rng = seeded(15);
    for t in rollout(&e, 16, &mut rng) {
        a.observe(t);
    }
    for _ in 0..5 {
        let rec = a.update(&mut rng).unwrap();
        for (_, v) in rec.entries() {
            assert!(v.is_finite());
        }
        assert!(a.alpha() > 0.0);
    }
    // fresh optimizer state so the step direction follows the gradient sign
    let mut a = SacAgent::new(sac_config(2, false), &mut seeded(14)).unwrap();
    // log π above −H̄ pushes log α up
    let high = vec![-a.target_entropy() + 1.0; 8];
    assert!(a.temperature_gradient(&high) < 0.0);
    let before = a.log_alpha();
    a.temperature_update(&high).unwrap();
    assert!(a.log_alpha() > before);
    let low = vec![-a.target_entropy() - 1.0; 8];
    let before = a.log_alpha();
    a.temperature_update(&low).unwrap();
    assert!(a.log_alpha() < before);
}

#[test]
fn sac_actor_gradient_matches_finite_differences() {
    use folio_core::agent::network::ValueNet;
    let e = env(2, true);
    let ts = rollout(&e, 2, &mut seeded(16));
    let a = SacAgent::new(sac_config(2, true), &mut seeded(17)).unwrap();
    let net = a.config().net;
    let windows: Vec<_> = ts.iter().map(|t| &t.state.window).collect();
    let weights: Vec<_> = ts.iter().map(|t| &t.state.weights).collect();
    let mut noise = vec![0.0; 2 * 3];
    fill_standard_normal(&mut seeded(18), &mut noise);
    let q1 = a.q1().clone();
    let err = gradient_error(a.actor(), &|g: &mut Graph, b| {
        let s = a.sample_policy(g, b, &windows, &weights, &noise).unwrap();
        let bq = g.bind_frozen(&q1);
        let q = ValueNet::forward(g, &bq, &net, &windows, &weights, Some(s.weights)).unwrap();
        let ent = g.scale(s.log_prob, 0.7);
        let per = g.sub(ent, q).unwrap();
        g.mean_all(per)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn sac_state_roundtrip() {
    let e = env(2, false);
    let mut a = SacAgent::new(sac_config(2, false), &mut seeded(19)).unwrap();
    let mut rng = seeded(20);
    for t in rollout(&e, 8, &mut rng) {
        a.observe(t);
    }
    a.update(&mut rng).unwrap();
    let saved = a.export_state();
    let mut b = SacAgent::new(sac_config(2, false), &mut seeded(21)).unwrap();
    b.import_state(&saved).unwrap();
    assert_eq!(b.export_state(), saved);
    assert_eq!(a.alpha(), b.alpha());
}

// ---------- MPT ----------

#[test]
fn mpt_single_asset_holds_everything() {
    let frame = market(90, &[(0.001, 0.02)], 3);
    let e = env_for(frame.clone(), EnvConfig { window: W, ..EnvConfig::default() });
    let mut a = MptAgent::new(shared(frame), MptConfig { lookback: 20, ..MptConfig::default() }).unwrap();
    let mut state = e.reset().unwrap();
    for _ in 0..30 {
        state = e.step(&state, &WeightVector::uniform(1)).unwrap().state;
    }
    let w = a.act(&e.observation(&state), false, &mut seeded(0)).unwrap();
    assert_eq!(w.as_slice(), &[1.0]);
    assert!(a.update(&mut seeded(0)).unwrap().is_empty());
}

#[test]
fn mpt_weights_stabilize_on_a_stationary_market() {
    // a one-day shift moves the optimum by roughly λ/(σ·L), so the check
    // uses a risk-averse λ
    let frame = market(1400, &[(0.001, 0.02), (0.0005, 0.015), (0.0, 0.01)], 4);
    let e = env_for(frame.clone(), EnvConfig { window: W, ..EnvConfig::default() });
    let mut a = MptAgent::new(shared(frame), MptConfig { lookback: 500, lambda: 0.01, include_cash: false }).unwrap();
    let mut rng = seeded(0);
    let mut state = e.reset().unwrap();
    let mut prev: Option<WeightVector> = None;
    let mut day = 0;
    loop {
        let obs = e.observation(&state);
        let w = if state.t >= 500 { a.act(&obs, false, &mut rng).unwrap() } else { state.weights.clone() };
        assert!(simplex_ok(&w));
        if state.t >= 600 {
            let p = prev.as_ref().unwrap();
            let change = w.as_slice().iter().zip(p.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(change < 0.05, "day {day}: {change}");
        }
        prev = Some(w.clone());
        let out = e.step(&state, &w).unwrap();
        day += 1;
        if out.done {
            break;
        }
        state = out.state;
    }
}

#[test]
fn mpt_with_cash_is_valid() {
    let frame = market(120, &[(0.0, 0.03), (-0.001, 0.02)], 5);
    let e = env_for(frame.clone(), EnvConfig { window: W, include_cash: true, ..EnvConfig::default() });
    let mut a = MptAgent::new(shared(frame), MptConfig { lookback: 30, lambda: 0.5, include_cash: true }).unwrap();
    let mut state = e.reset().unwrap();
    for _ in 0..40 {
        state = e.step(&state, &state.weights.clone()).unwrap().state;
    }
    let w = a.act(&e.observation(&state), false, &mut seeded(0)).unwrap();
    assert_eq!(w.len(), 3);
    assert!(simplex_ok(&w));
    assert!(a.last_solution().is_some());
}
