mod common;

use std::fs;

use common::*;
use folio::artifacts::*;
use folio::commands::{self, ReportFile};
use folio::{CliError, IngestError};
use tempfile::TempDir;

fn fixture() -> TempDir {
    let dir = TempDir::new().unwrap();
    write_market(&dir.path().join("data"), &four_assets(), 200, 17);
    dir
}

#[test]
fn ingest_writes_frame_and_stats_deterministically() {
    let root = fixture();
    let cfg = small_config(root.path(), "mpt", "run");
    let data = commands::ingest(&cfg).unwrap();
    assert_eq!(data.full.num_assets(), 4);
    assert_eq!(data.full.len(), 200);
    assert_eq!(data.train.len() + data.test.len(), 200);
    let frame = fs::read(cfg.out_dir.join(FRAME_FILE)).unwrap();
    let stats = fs::read(cfg.out_dir.join(STATS_FILE)).unwrap();
    assert!(manifest_path(&cfg.out_dir, "ingest").is_file());
    commands::ingest(&cfg).unwrap();
    assert_eq!(fs::read(cfg.out_dir.join(FRAME_FILE)).unwrap(), frame);
    assert_eq!(fs::read(cfg.out_dir.join(STATS_FILE)).unwrap(), stats);
    let reloaded = commands::load_ingested(&cfg).unwrap();
    assert_eq!(*reloaded.full, *data.full);
    assert_eq!(reloaded.stats, data.stats);
}

#[test]
fn missing_csv_names_the_ticker() {
    let root = fixture();
    fs::remove_file(root.path().join("data/CCC.csv")).unwrap();
    let cfg = small_config(root.path(), "mpt", "run");
    match commands::ingest(&cfg) {
        Err(CliError::Ingest(IngestError::MissingFile { ticker, .. })) => assert_eq!(ticker, "CCC"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn stages_need_their_inputs() {
    let root = fixture();
    let cfg = small_config(root.path(), "sac", "run");
    assert!(matches!(commands::train(&cfg), Err(CliError::MissingArtifact(_))));
    commands::ingest(&cfg).unwrap();
    assert!(matches!(commands::backtest(&cfg), Err(CliError::MissingArtifact(_))));
}

#[test]
fn one_episode_checkpoint_loads_and_backtests() {
    let root = fixture();
    let cfg = small_config(root.path(), "ddpg", "run");
    commands::ingest(&cfg).unwrap();
    let summary = commands::train(&cfg).unwrap();
    assert_eq!(summary.logs.len(), 1);
    let ck: Checkpoint = read_json(&cfg.out_dir.join(CHECKPOINT_FILE)).unwrap();
    assert!(ck.complete);
    assert_eq!(ck.config_hash, cfg.hash());
    let bt = commands::backtest(&cfg).unwrap();
    let test_days = commands::load_ingested(&cfg).unwrap().test.len();
    assert_eq!(bt.rows.len(), test_days - cfg.window);
    let trace = fs::read_to_string(cfg.out_dir.join(TRACE_FILE)).unwrap();
    assert_eq!(trace.lines().count(), bt.rows.len() + 1);
    assert_eq!(trace.lines().next().unwrap(), "date,w_AAA,w_BBB,w_CCC,w_DDD,gross_return,cost,net_return,value,reward");
}

#[test]
fn training_is_reproducible() {
    let root = fixture();
    let a = small_config(root.path(), "sac", "a");
    let b = small_config(root.path(), "sac", "b");
    for cfg in [&a, &b] {
        commands::ingest(cfg).unwrap();
        commands::train(cfg).unwrap();
    }
    let log = |cfg: &folio::RunConfig| fs::read(cfg.out_dir.join(TRAIN_LOG_FILE)).unwrap();
    assert_eq!(log(&a), log(&b));
    assert_eq!(fs::read(a.out_dir.join(CHECKPOINT_FILE)).unwrap(), fs::read(b.out_dir.join(CHECKPOINT_FILE)).unwrap());
}

#[test]
fn mismatched_or_partial_checkpoints_are_refused() {
    let root = fixture();
    let mut cfg = small_config(root.path(), "ddpg", "run");
    commands::ingest(&cfg).unwrap();
    commands::train(&cfg).unwrap();
    cfg.cost_rate = 0.002;
    assert!(matches!(commands::backtest(&cfg), Err(CliError::ChecksumMismatch { .. })));
    cfg.cost_rate = 0.001;
    let path = cfg.out_dir.join(CHECKPOINT_FILE);
    let mut ck: Checkpoint = read_json(&path).unwrap();
    ck.complete = false;
    write_json(&path, &ck).unwrap();
    assert!(matches!(commands::backtest(&cfg), Err(CliError::IncompleteCheckpoint { .. })));
}

#[test]
fn mpt_training_is_a_no_op_with_a_manifest() {
    let root = fixture();
    let cfg = small_config(root.path(), "mpt", "run");
    commands::ingest(&cfg).unwrap();
    let summary = commands::train(&cfg).unwrap();
    assert!(summary.logs.is_empty());
    let manifest: RunManifest = read_json(&manifest_path(&cfg.out_dir, "train")).unwrap();
    assert_eq!(manifest.seed, 5);
    assert_eq!(manifest.config_hash, cfg.hash());
    assert!(manifest.notes.iter().any(|n| n.contains("episode length")));
}

#[test]
fn mpt_backtest_report_and_accounting() {
    let root = fixture();
    let cfg = small_config(root.path(), "mpt", "run");
    commands::ingest(&cfg).unwrap();
    let bt = commands::backtest(&cfg).unwrap();
    for row in &bt.rows {
        let s: f64 = row.weights.iter().sum();
        assert!((s - 1.0).abs() <= 1e-9 && row.weights.iter().all(|w| *w >= 0.0));
    }
    let log_sum: f64 = bt.rows.iter().map(|r| r.reward).sum();
    assert!((log_sum - (bt.report.final_value / bt.initial_value).ln()).abs() < 1e-9);
    let report: ReportFile = read_json(&cfg.out_dir.join(REPORT_FILE)).unwrap();
    assert!(report.rows().iter().all(|(_, v)| v.is_none_or(f64::is_finite)));
    assert!(report.sharpe_ratio.is_some() && report.var_95.is_some());
    let trace = fs::read_to_string(cfg.out_dir.join(TRACE_FILE)).unwrap();
    assert!(trace.lines().next().unwrap().ends_with(",expected_return,variance,active_set"));
}

#[test]
fn every_artifact_has_a_checksum() {
    let root = fixture();
    let cfg = small_config(root.path(), "mpt", "run");
    commands::ingest(&cfg).unwrap();
    commands::train(&cfg).unwrap();
    commands::backtest(&cfg).unwrap();
    let sums: Checksums = read_json(&cfg.out_dir.join(CHECKSUMS_FILE)).unwrap();
    let mut names: Vec<String> = fs::read_dir(&cfg.out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != CHECKSUMS_FILE)
        .collect();
    names.sort();
    let listed: Vec<String> = sums.files.iter().map(|f| f.path.clone()).collect();
    assert_eq!(listed, names);
    for f in &sums.files {
        assert_eq!(f.sha256, sha256_hex(&fs::read(cfg.out_dir.join(&f.path)).unwrap()));
    }
}

#[test]
fn report_merges_runs() {
    let root = fixture();
    let mut dirs = Vec::new();
    for agent in ["ddpg", "sac", "mpt"] {
        let cfg = small_config(root.path(), agent, agent);
        commands::ingest(&cfg).unwrap();
        commands::train(&cfg).unwrap();
        commands::backtest(&cfg).unwrap();
        dirs.push(cfg.out_dir.clone());
    }
    let out = root.path().join("cmp");
    let labels = commands::report(&dirs, &out).unwrap();
    assert_eq!(labels, ["ddpg", "sac", "mpt"]);
    let table = fs::read_to_string(out.join(commands::COMPARISON_FILE)).unwrap();
    let header = table.lines().next().unwrap();
    assert_eq!(header, "metric,ddpg,sac,mpt");
    assert!(table.lines().any(|l| l.starts_with("sharpe_ratio,")));
    assert!(table.lines().any(|l| l.starts_with("avg_weight_DDD,")));
    assert!(table.lines().all(|l| l.split(',').count() == 4));
    let series = fs::read_to_string(out.join(commands::NORMALIZED_FILE)).unwrap();
    for label in &labels {
        let first = series.lines().skip(1).find(|l| l.starts_with(&format!("{label},"))).unwrap();
        assert_eq!(first.rsplit(',').next().unwrap(), "1");
    }

    let single = commands::report(&dirs[2..], &root.path().join("one")).unwrap();
    assert_eq!(single, ["mpt"]);
    let table = fs::read_to_string(root.path().join("one").join(commands::COMPARISON_FILE)).unwrap();
    assert!(table.lines().all(|l| l.split(',').count() == 2));

    assert!(matches!(
        commands::report(&[root.path().join("data")], &root.path().join("none")),
        Err(CliError::NoCompletedRuns)
    ));
}

#[test]
fn forecast_stage_writes_its_outputs() {
    let root = fixture();
    let cfg = small_config(root.path(), "sac", "run");
    commands::ingest(&cfg).unwrap();
    let s = commands::forecast(&cfg).unwrap();
    assert_eq!(s.epochs, 3);
    assert!(s.test_mean_rmse.is_finite());
    assert!((0.0..=1.0).contains(&s.test_directional_accuracy));
    let preds = fs::read_to_string(cfg.out_dir.join(commands::FORECAST_PREDICTIONS_FILE)).unwrap();
    assert_eq!(preds.lines().count(), s.test_samples + 1);
}
