mod common;

use common::*;
use folio_core::agent::ddpg::{DdpgAgent, DdpgConfig};
use folio_core::agent::mpt::{MptAgent, MptConfig};
use folio_core::agent::sac::{SacAgent, SacConfig};
use folio_core::env::EnvConfig;
use folio_core::metrics::ReportSettings;
use folio_core::rng::seeded;
use folio_core::runner::{backtest, train};

const W: usize = 5;

#[test]
fn backtest_rows_and_reward_identity() {
    let frame = market(60, &[(0.001, 0.02), (0.0, 0.01)], 41);
    let e = env_for(frame.clone(), EnvConfig { window: W, include_cash: true, ..EnvConfig::default() });
    let mut agent = SacAgent::new(SacConfig::new(small_net(2, W, true)), &mut seeded(1)).unwrap();
    let bt = backtest(&e, &mut agent, &mut seeded(2), &ReportSettings::default()).unwrap();
    assert_eq!(bt.rows.len(), 60 - W);
    assert_eq!(bt.slots, ["cash", "A0", "A1"]);
    let values = bt.values();
    let log_sum: f64 = bt.rows.iter().map(|r| r.reward).sum();
    assert!((log_sum - (values.last().unwrap() / values[0]).ln()).abs() < 1e-12);
    assert_eq!(bt.report.final_value, *values.last().unwrap());
    // deterministic replay
    let again = backtest(&e, &mut agent, &mut seeded(99), &ReportSettings::default()).unwrap();
    assert_eq!(bt, again);
}

#[test]
fn mpt_backtest_carries_solver_details() {
    let frame = market(80, &[(0.001, 0.02), (0.0, 0.01)], 42);
    let e = env_for(frame.clone(), EnvConfig { window: 30, ..EnvConfig::default() });
    let mut agent = MptAgent::new(shared(frame), MptConfig { lookback: 20, ..MptConfig::default() }).unwrap();
    let bt = backtest(&e, &mut agent, &mut seeded(0), &ReportSettings::default()).unwrap();
    assert!(bt.rows.iter().all(|r| r.solver.is_some()));
}

#[test]
fn training_logs_every_episode() {
    let frame = market(40, &[(0.001, 0.02), (0.0, 0.01)], 43);
    let e = env_for(frame, EnvConfig { window: W, ..EnvConfig::default() });
    let mut cfg = DdpgConfig::new(small_net(2, W, false));
    cfg.batch_size = 4;
    let mut agent = DdpgAgent::new(cfg, &mut seeded(3)).unwrap();
    let mut seen = 0;
    let logs = train(&e, &mut agent, 3, 10, &mut seeded(4), |_| seen += 1).unwrap();
    assert_eq!(seen, 3);
    assert!(logs.iter().all(|l| l.steps == 10));
    // the first update happens once the buffer holds a batch
    assert_eq!(logs[0].updates, 7);
    assert!(logs[0].mean_losses.iter().all(|(_, v)| v.is_finite()));
}
