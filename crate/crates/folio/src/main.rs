use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use folio::{commands, RunConfig};

#[derive(Parser)]
#[command(
    name = "folio",
    version,
    about = "Portfolio allocation with actor-critic agents and a mean-variance benchmark"
)]
struct Cli {
    /// Run configuration (flat `key = value` file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's `out_dir`; for `report`, where to write.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config's `agent`.
    #[arg(long, global = true, value_parser = ["ddpg", "sac", "mpt"])]
    agent: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and align the CSVs, split them and fit feature statistics.
    Ingest,
    /// Train the configured agent on the training split.
    Train,
    /// Evaluate the trained agent on the test split.
    Backtest,
    /// Merge finished backtests into one comparison table.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Train and evaluate the next-day return forecaster.
    Forecast,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().context("--config is required for this command")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = RunConfig::parse(&text).with_context(|| format!("in {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(agent) = &cli.agent {
        cfg.set("agent", agent)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest => {
            let cfg = load_config(&cli)?;
            let data = commands::ingest(&cfg)?;
            println!(
                "ingested {} assets over {} days ({} train, {} test) into {}",
                data.full.num_assets(),
                data.full.len(),
                data.train.len(),
                data.test.len(),
                cfg.out_dir.display()
            );
        }
        Command::Train => {
            let cfg = load_config(&cli)?;
            let summary = commands::train(&cfg)?;
            println!(
                "trained {} for {} episodes of up to {} steps",
                cfg.agent.name(),
                summary.logs.len(),
                summary.step_cap
            );
        }
        Command::Backtest => {
            let cfg = load_config(&cli)?;
            let bt = commands::backtest(&cfg)?;
            println!("{} days, final value {}", bt.rows.len(), bt.report.final_value);
        }
        Command::Report { runs } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("report"));
            let labels = commands::report(runs, &out)?;
            println!("compared {} in {}", labels.join(", "), out.display());
        }
        Command::Forecast => {
            let cfg = load_config(&cli)?;
            let s = commands::forecast(&cfg)?;
            println!("test mean RMSE {:.6}, directional accuracy {:.3}", s.test_mean_rmse, s.test_directional_accuracy);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
