//! The five pipeline stages.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use folio_core::agent::{Agent, AgentKind, DdpgAgent, MptAgent, SacAgent};
use folio_core::data::{align_frames, compute_log_diffs, fit_stats, split_by_date, standardize, MarketFrame};
use folio_core::env::PortfolioEnv;
use folio_core::forecast::{build_dataset, directional_accuracy, mean_rmse, train_forecaster, Forecaster};
use folio_core::metrics::MetricsReport;
use folio_core::rng::seeded;
use folio_core::runner::{self, Backtest, EpisodeLog};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::artifacts::*;
use crate::{load_ohlcv_csv, CliError, RunConfig};

/// Everything the later stages read back from `ingest`.
#[derive(Debug)]
pub struct Ingested {
    pub full: Arc<MarketFrame>,
    pub train: MarketFrame,
    pub test: MarketFrame,
    pub stats: folio_core::data::FeatureStats,
}

fn start_manifest(cfg: &RunConfig, command: &str, inputs: Vec<InputHash>, notes: Vec<String>) -> Result<(), CliError> {
    let manifest = RunManifest {
        command: command.to_string(),
        config: cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        inputs,
        started_at: chrono::Utc::now().to_rfc3339(),
        notes,
    };
    write_json(&manifest_path(&cfg.out_dir, command), &manifest)
}

fn frame_input(cfg: &RunConfig) -> Result<Vec<InputHash>, CliError> {
    let path = cfg.out_dir.join(FRAME_FILE);
    if !path.is_file() {
        return Err(CliError::MissingArtifact(path));
    }
    Ok(vec![InputHash { ticker: "*".into(), sha256: sha256_hex(&read_bytes(&path)?), path }])
}

pub fn ingest(cfg: &RunConfig) -> Result<Ingested, CliError> {
    let mut series = Vec::with_capacity(cfg.tickers.len());
    let mut inputs = Vec::with_capacity(cfg.tickers.len());
    for ticker in &cfg.tickers {
        let path = cfg.csv_path(ticker);
        let bars = load_ohlcv_csv(&path, ticker)?;
        inputs.push(InputHash { ticker: ticker.clone(), sha256: sha256_hex(&read_bytes(&path)?), path });
        series.push((ticker.clone(), bars));
    }
    start_manifest(cfg, "ingest", inputs, Vec::new())?;
    let full = align_frames(series, cfg.window)?;
    let (train, test) = split_by_date(&full, cfg.train_end)?;
    let stats = fit_stats(&compute_log_diffs(&train, cfg.volume_eps)?)?;
    info!("aligned {} days: {} train, {} test", full.len(), train.len(), test.len());
    write_json(&cfg.out_dir.join(FRAME_FILE), &FrameFile::from_frame(&full))?;
    write_json(&cfg.out_dir.join(STATS_FILE), &StatsFile::new(full.assets(), &stats))?;
    write_json(
        &cfg.out_dir.join(SPLIT_FILE),
        &SplitFile {
            train_end: format_date(cfg.train_end),
            train_days: train.len(),
            test_days: test.len(),
            test_start: format_date(test.dates()[0]),
        },
    )?;
    write_checksums(&cfg.out_dir)?;
    Ok(Ingested { full: Arc::new(full), train, test, stats })
}

pub fn load_ingested(cfg: &RunConfig) -> Result<Ingested, CliError> {
    let frame: FrameFile = read_json(&cfg.out_dir.join(FRAME_FILE))?;
    if frame.assets != cfg.tickers {
        return Err(CliError::AssetMismatch { expected: cfg.tickers.clone(), found: frame.assets });
    }
    let full = frame.to_frame()?;
    let stats: StatsFile = read_json(&cfg.out_dir.join(STATS_FILE))?;
    let (train, test) = split_by_date(&full, cfg.train_end)?;
    Ok(Ingested { full: Arc::new(full), train, test, stats: stats.to_stats()? })
}

pub fn build_agent(
    cfg: &RunConfig,
    full: &Arc<MarketFrame>,
    rng: &mut folio_core::rng::FolioRng,
) -> Result<Box<dyn Agent>, CliError> {
    Ok(match cfg.agent {
        AgentKind::Ddpg => Box::new(DdpgAgent::new(cfg.ddpg_config(), rng)?),
        AgentKind::Sac => Box::new(SacAgent::new(cfg.sac_config(), rng)?),
        AgentKind::Mpt => Box::new(MptAgent::new(full.clone(), cfg.mpt_config())?),
    })
}

fn loss_names(kind: AgentKind) -> &'static [&'static str] {
    match kind {
        AgentKind::Ddpg => &["critic_loss", "actor_loss"],
        AgentKind::Sac => &["q1_loss", "q2_loss", "value_loss", "actor_loss", "alpha_loss", "alpha"],
        AgentKind::Mpt => &[],
    }
}

fn training_log_csv(kind: AgentKind, logs: &[EpisodeLog]) -> String {
    let names = loss_names(kind);
    let mut out = String::from("episode,steps,updates,reward_sum,final_value");
    names.iter().for_each(|n| {
        out.push(',');
        out.push_str(n);
    });
    out.push('\n');
    for log in logs {
        write!(out, "{},{},{},{},{}", log.episode, log.steps, log.updates, log.reward_sum, log.final_value).unwrap();
        for name in names {
            out.push(',');
            if let Some((_, v)) = log.mean_losses.iter().find(|(n, _)| n == name) {
                write!(out, "{v}").unwrap();
            }
        }
        out.push('\n');
    }
    out
}

pub struct TrainSummary {
    pub logs: Vec<EpisodeLog>,
    pub step_cap: usize,
}

pub fn train(cfg: &RunConfig) -> Result<TrainSummary, CliError> {
    let data = load_ingested(cfg)?;
    let env = PortfolioEnv::from_frame(data.train, &data.stats, cfg.volume_eps, cfg.env_config())?;
    let step_cap = cfg.steps_per_episode.min(env.episode_len());
    let mut notes = vec![format!(
        "episode length {step_cap} (steps_per_episode {}, training data allows {})",
        cfg.steps_per_episode,
        env.episode_len()
    )];
    if cfg.agent == AgentKind::Mpt {
        notes.push("mpt has no trainable state; training is skipped".into());
    }
    start_manifest(cfg, "train", frame_input(cfg)?, notes)?;

    let mut rng = seeded(cfg.seed);
    let mut agent = build_agent(cfg, &data.full, &mut rng)?;
    let hash = cfg.hash();
    let checkpoint_path = cfg.out_dir.join(CHECKPOINT_FILE);
    let mut logs = Vec::new();
    if cfg.agent != AgentKind::Mpt {
        for episode in 0..cfg.episodes {
            match runner::run_training_episode(&env, agent.as_mut(), episode, step_cap, &mut rng) {
                Ok(log) => {
                    info!(
                        "episode {episode}: reward {:.6}, value {:.6}, {} updates",
                        log.reward_sum, log.final_value, log.updates
                    );
                    logs.push(log);
                }
                Err(e) => {
                    warn!("training stopped in episode {episode}: {e}");
                    let partial = Checkpoint::new(cfg.agent.name(), &hash, false, episode, &agent.export_state());
                    write_json(&checkpoint_path, &partial)?;
                    write_bytes(&cfg.out_dir.join(TRAIN_LOG_FILE), training_log_csv(cfg.agent, &logs).as_bytes())?;
                    return Err(e.into());
                }
            }
        }
    }
    let ck = Checkpoint::new(cfg.agent.name(), &hash, true, logs.len(), &agent.export_state());
    write_json(&checkpoint_path, &ck)?;
    write_bytes(&cfg.out_dir.join(TRAIN_LOG_FILE), training_log_csv(cfg.agent, &logs).as_bytes())?;
    write_checksums(&cfg.out_dir)?;
    Ok(TrainSummary { logs, step_cap })
}

/// Report JSON; keys follow the comparison table's row labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub agent: String,
    pub start_date: String,
    pub steps: usize,
    pub final_portfolio_value: f64,
    pub mean_log_return: f64,
    pub standard_deviation: Option<f64>,
    pub sharpe_ratio: Option<f64>,
    pub sortino_ratio: Option<f64>,
    pub maximum_drawdown: f64,
    pub var_95: Option<f64>,
    pub cvar_95: Option<f64>,
    pub calmar_ratio: Option<f64>,
    pub utility: Option<f64>,
    pub avg_weight: Vec<SlotWeight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotWeight {
    pub slot: String,
    pub weight: f64,
}

impl ReportFile {
    pub fn new(agent: AgentKind, bt: &Backtest) -> Self {
        let r: &MetricsReport = &bt.report;
        Self {
            agent: agent.name().into(),
            start_date: format_date(bt.start_date),
            steps: bt.rows.len(),
            final_portfolio_value: r.final_value,
            mean_log_return: r.mean_log_return,
            standard_deviation: r.std,
            sharpe_ratio: r.sharpe,
            sortino_ratio: r.sortino,
            maximum_drawdown: r.max_drawdown,
            var_95: r.var_95,
            cvar_95: r.cvar_95,
            calmar_ratio: r.calmar,
            utility: r.utility,
            avg_weight: r.avg_weights.iter().map(|(s, w)| SlotWeight { slot: s.clone(), weight: *w }).collect(),
        }
    }

    /// `(label, value)` rows of the comparison table.
    pub fn rows(&self) -> Vec<(String, Option<f64>)> {
        let mut rows = vec![
            ("final_portfolio_value".to_string(), Some(self.final_portfolio_value)),
            ("mean_log_return".into(), Some(self.mean_log_return)),
            ("standard_deviation".into(), self.standard_deviation),
            ("sharpe_ratio".into(), self.sharpe_ratio),
            ("sortino_ratio".into(), self.sortino_ratio),
            ("maximum_drawdown".into(), Some(self.maximum_drawdown)),
            ("var_95".into(), self.var_95),
            ("cvar_95".into(), self.cvar_95),
            ("calmar_ratio".into(), self.calmar_ratio),
            ("utility".into(), self.utility),
        ];
        rows.extend(self.avg_weight.iter().map(|w| (format!("avg_weight_{}", w.slot), Some(w.weight))));
        rows
    }
}

fn trace_csv(bt: &Backtest, with_solver: bool) -> String {
    let mut out = String::from("date");
    for s in &bt.slots {
        write!(out, ",w_{s}").unwrap();
    }
    out.push_str(",gross_return,cost,net_return,value,reward");
    if with_solver {
        out.push_str(",expected_return,variance,active_set");
    }
    out.push('\n');
    for row in &bt.rows {
        out.push_str(&format_date(row.date));
        for w in &row.weights {
            write!(out, ",{w}").unwrap();
        }
        write!(out, ",{},{},{},{},{}", row.gross_return, row.cost, row.net_return, row.value, row.reward).unwrap();
        if with_solver {
            match &row.solver {
                Some(s) => {
                    let active: Vec<String> = s.active_set.iter().map(|i| bt.slots[*i].clone()).collect();
                    write!(out, ",{},{},{}", s.expected_return, s.variance, active.join(";")).unwrap();
                }
                None => out.push_str(",,,"),
            }
        }
        out.push('\n');
    }
    out
}

fn values_csv(bt: &Backtest) -> String {
    let mut out = String::from("date,value\n");
    writeln!(out, "{},{}", format_date(bt.start_date), bt.initial_value).unwrap();
    for row in &bt.rows {
        writeln!(out, "{},{}", format_date(row.date), row.value).unwrap();
    }
    out
}

pub fn backtest(cfg: &RunConfig) -> Result<Backtest, CliError> {
    let data = load_ingested(cfg)?;
    let mut inputs = frame_input(cfg)?;
    let mut rng = seeded(cfg.seed);
    let mut agent = build_agent(cfg, &data.full, &mut rng)?;
    if cfg.agent != AgentKind::Mpt {
        let path = cfg.out_dir.join(CHECKPOINT_FILE);
        let ck: Checkpoint = read_json(&path)?;
        if ck.config_hash != cfg.hash() {
            return Err(CliError::ChecksumMismatch { expected: cfg.hash(), found: ck.config_hash });
        }
        if !ck.complete {
            return Err(CliError::IncompleteCheckpoint { episodes: ck.episodes });
        }
        agent.import_state(&ck.state()?)?;
        inputs.push(InputHash { ticker: "checkpoint".into(), sha256: sha256_hex(&read_bytes(&path)?), path });
    }
    let notes = vec!["evaluation without exploration: ddpg uses the noiseless actor, sac the squashed mean".into()];
    start_manifest(cfg, "backtest", inputs, notes)?;
    let env = PortfolioEnv::from_frame(data.test, &data.stats, cfg.volume_eps, cfg.env_config())?;
    let bt = runner::backtest(&env, agent.as_mut(), &mut rng, &cfg.report_settings())?;
    info!("backtest over {} days: final value {}", bt.rows.len(), bt.report.final_value);
    write_bytes(&cfg.out_dir.join(TRACE_FILE), trace_csv(&bt, cfg.agent == AgentKind::Mpt).as_bytes())?;
    write_bytes(&cfg.out_dir.join(VALUES_FILE), values_csv(&bt).as_bytes())?;
    write_json(&cfg.out_dir.join(REPORT_FILE), &ReportFile::new(cfg.agent, &bt))?;
    write_checksums(&cfg.out_dir)?;
    Ok(bt)
}

pub const COMPARISON_FILE: &str = "comparison.csv";
pub const NORMALIZED_FILE: &str = "normalized_values.csv";

fn read_values(path: &Path) -> Result<Vec<(String, f64)>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Corrupt(format!("{}: {e}", path.display())))?;
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| CliError::Corrupt(format!("{}: {e}", path.display())))?;
            let v =
                r[1].parse().map_err(|_| CliError::Corrupt(format!("{}: bad value {:?}", path.display(), &r[1])))?;
            Ok((r[0].to_string(), v))
        })
        .collect()
}

fn csv_cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Merges finished backtests into `comparison.csv` (one column per run)
/// and `normalized_values.csv` (`agent,date,value` with every series
/// divided by its starting value).
pub fn report(runs: &[PathBuf], out_dir: &Path) -> Result<Vec<String>, CliError> {
    let mut loaded = Vec::new();
    for dir in runs {
        let path = dir.join(REPORT_FILE);
        if !path.is_file() {
            warn!("{} has no finished backtest, skipping", dir.display());
            continue;
        }
        let report: ReportFile = read_json(&path)?;
        let values = read_values(&dir.join(VALUES_FILE))?;
        loaded.push((dir.clone(), report, values));
    }
    if loaded.is_empty() {
        return Err(CliError::NoCompletedRuns);
    }
    let labels: Vec<String> = loaded
        .iter()
        .map(|(dir, r, _)| {
            let clashes = loaded.iter().filter(|(_, o, _)| o.agent == r.agent).count() > 1;
            if clashes {
                let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into());
                format!("{}:{name}", r.agent)
            } else {
                r.agent.clone()
            }
        })
        .collect();

    let mut metrics: Vec<String> = Vec::new();
    for (_, r, _) in &loaded {
        for (name, _) in r.rows() {
            if !metrics.contains(&name) {
                metrics.push(name);
            }
        }
    }
    let mut table = String::from("metric");
    labels.iter().for_each(|l| write!(table, ",{l}").unwrap());
    table.push('\n');
    for m in &metrics {
        table.push_str(m);
        for (_, r, _) in &loaded {
            let v = r.rows().into_iter().find(|(n, _)| n == m).and_then(|(_, v)| v);
            write!(table, ",{}", csv_cell(v)).unwrap();
        }
        table.push('\n');
    }

    let mut series = String::from("agent,date,value\n");
    for (label, (_, _, values)) in labels.iter().zip(&loaded) {
        let Some(&(_, v0)) = values.first() else { continue };
        for (date, v) in values {
            writeln!(series, "{label},{date},{}", v / v0).unwrap();
        }
    }
    write_bytes(&out_dir.join(COMPARISON_FILE), table.as_bytes())?;
    write_bytes(&out_dir.join(NORMALIZED_FILE), series.as_bytes())?;
    write_checksums(out_dir)?;
    Ok(labels)
}

pub const FORECAST_LOSS_FILE: &str = "forecast_loss.csv";
pub const FORECAST_PREDICTIONS_FILE: &str = "forecast_predictions.csv";
pub const FORECAST_SUMMARY_FILE: &str = "forecast_summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub epochs: usize,
    pub final_train_loss: f64,
    pub final_validation_loss: Option<f64>,
    pub test_samples: usize,
    pub test_mean_rmse: f64,
    pub test_directional_accuracy: f64,
}

pub fn forecast(cfg: &RunConfig) -> Result<ForecastSummary, CliError> {
    let data = load_ingested(cfg)?;
    start_manifest(
        cfg,
        "forecast",
        frame_input(cfg)?,
        vec!["validation uses the trailing share of the training split".into()],
    )?;
    let features = |frame: &MarketFrame| -> Result<_, CliError> {
        Ok(Arc::new(standardize(&compute_log_diffs(frame, cfg.volume_eps)?, &data.stats)?))
    };
    let train_set = build_dataset(&data.train, &features(&data.train)?, cfg.window)?;
    let test_set = build_dataset(&data.test, &features(&data.test)?, cfg.window)?;
    let mut rng = seeded(cfg.seed);
    let mut model = Forecaster::new(cfg.net_config(), &mut rng)?;
    let curve = train_forecaster(&mut model, &train_set, &cfg.forecast_config(), &mut rng, |e| {
        info!("epoch {}: train {:.6} validation {:?}", e.epoch, e.train, e.validation)
    })?;

    let windows: Vec<_> = test_set.iter().map(|s| &s.input).collect();
    let preds = model.predict_batch(&windows)?;
    let targets: Vec<f64> = test_set.iter().flat_map(|s| s.target.iter().copied()).collect();
    let m = data.full.num_assets();

    let mut loss = String::from("epoch,train,validation\n");
    for e in &curve {
        writeln!(loss, "{},{},{}", e.epoch, e.train, csv_cell(e.validation)).unwrap();
    }
    let mut table = String::from("date");
    for t in data.full.assets() {
        write!(table, ",pred_{t},actual_{t}").unwrap();
    }
    table.push('\n');
    for (k, sample) in test_set.iter().enumerate() {
        // the target is the return into the day after the window
        table.push_str(&format_date(data.test.dates()[sample.input.end_day() + 1]));
        for i in 0..m {
            write!(table, ",{},{}", preds[k * m + i], targets[k * m + i]).unwrap();
        }
        table.push('\n');
    }
    let last = curve.last().expect("at least one epoch");
    let summary = ForecastSummary {
        epochs: curve.len(),
        final_train_loss: last.train,
        final_validation_loss: last.validation,
        test_samples: test_set.len(),
        test_mean_rmse: mean_rmse(&preds, &targets, m)?,
        test_directional_accuracy: directional_accuracy(&preds, &targets)?,
    };
    write_bytes(&cfg.out_dir.join(FORECAST_LOSS_FILE), loss.as_bytes())?;
    write_bytes(&cfg.out_dir.join(FORECAST_PREDICTIONS_FILE), table.as_bytes())?;
    write_json(&cfg.out_dir.join(FORECAST_SUMMARY_FILE), &summary)?;
    write_checksums(&cfg.out_dir)?;
    Ok(summary)
}
