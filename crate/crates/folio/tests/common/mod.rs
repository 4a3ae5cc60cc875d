#![allow(dead_code)]

use std::path::Path;

use folio::csv_io::write_ohlcv_csv;
use folio::RunConfig;
use folio_core::synth::{generate, SynthAsset};
use folio_core::NaiveDate;

pub fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 1, 1).unwrap()
}

/// Writes `<ticker>.csv` for every asset into `dir`.
pub fn write_market(dir: &Path, assets: &[SynthAsset], days: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for (name, bars) in generate(assets, start(), days, seed) {
        write_ohlcv_csv(&dir.join(format!("{name}.csv")), &bars).unwrap();
    }
}

pub fn four_assets() -> Vec<SynthAsset> {
    vec![
        SynthAsset::new("AAA", 0.001, 0.03),
        SynthAsset::new("BBB", 0.0005, 0.02),
        SynthAsset::new("CCC", 0.0, 0.015),
        SynthAsset::new("DDD", -0.0003, 0.025),
    ]
}

/// Small-network config over a 200-day market split after day 139.
pub fn small_config(root: &Path, agent: &str, out: &str) -> RunConfig {
    let text = format!(
        "tickers = AAA,BBB,CCC,DDD
data_dir = {data}
train_end = 2021-05-20
agent = {agent}
seed = 5
out_dir = {out}
window = 6
hidden = 6
lstm_layers = 1
batch_size = 8
buffer_capacity = 500
episodes = 1
steps_per_episode = 40
mpt_lookback = 20
forecast_epochs = 3
forecast_batch_size = 16
",
        data = root.join("data").display(),
        out = root.join(out).display(),
    );
    RunConfig::parse(&text).unwrap()
}
