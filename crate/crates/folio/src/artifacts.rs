//! On-disk formats of a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use folio_core::agent::AgentState;
use folio_core::data::{FeatureStats, MarketFrame, OhlcvBar, CHANNELS};
use folio_core::nn::{AdamConfig, AdamState, ParamSet, Tensor};
use folio_core::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const FRAME_FILE: &str = "frame.json";
pub const STATS_FILE: &str = "stats.json";
pub const SPLIT_FILE: &str = "split.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.json";
pub const VALUES_FILE: &str = "values.csv";
pub const CHECKSUMS_FILE: &str = "checksums.json";

const DATE_FORMAT: &str = "%Y-%m-%d";

pub fn format_date(d: NaiveDate) -> String {
    d.format(DATE_FORMAT).to_string()
}

pub fn parse_date(s: &str) -> Result<NaiveDate, CliError> {
    NaiveDate::parse_from_str(s, DATE_FORMAT).map_err(|e| CliError::Corrupt(format!("bad date {s:?}: {e}")))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, bytes).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Corrupt(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingArtifact(path.to_path_buf()));
    }
    serde_json::from_slice(&read_bytes(path)?).map_err(|e| CliError::Corrupt(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFile {
    pub assets: Vec<String>,
    pub dates: Vec<String>,
    /// `[asset][day] = [open, high, low, close, volume]`.
    pub bars: Vec<Vec<[f64; 5]>>,
}

impl FrameFile {
    pub fn from_frame(frame: &MarketFrame) -> Self {
        Self {
            assets: frame.assets().to_vec(),
            dates: frame.dates().iter().map(|d| format_date(*d)).collect(),
            bars: (0..frame.num_assets())
                .map(|a| frame.bars(a).iter().map(|b| [b.open, b.high, b.low, b.close, b.volume]).collect())
                .collect(),
        }
    }

    pub fn to_frame(&self) -> Result<MarketFrame, CliError> {
        let dates = self.dates.iter().map(|d| parse_date(d)).collect::<Result<Vec<_>, _>>()?;
        let bars = self
            .bars
            .iter()
            .map(|series| {
                if series.len() != dates.len() {
                    return Err(CliError::Corrupt("frame rows do not match its dates".into()));
                }
                Ok(series
                    .iter()
                    .zip(&dates)
                    .map(|(v, d)| OhlcvBar { date: *d, open: v[0], high: v[1], low: v[2], close: v[3], volume: v[4] })
                    .collect())
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(MarketFrame::new(self.assets.clone(), bars)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    pub assets: Vec<String>,
    pub mean: Vec<[f64; CHANNELS]>,
    pub std: Vec<[f64; CHANNELS]>,
}

impl StatsFile {
    pub fn new(assets: &[String], stats: &FeatureStats) -> Self {
        Self { assets: assets.to_vec(), mean: stats.mean().to_vec(), std: stats.std().to_vec() }
    }

    pub fn to_stats(&self) -> Result<FeatureStats, CliError> {
        Ok(FeatureStats::from_parts(self.mean.clone(), self.std.clone())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub train_end: String,
    pub train_days: usize,
    pub test_days: usize,
    pub test_start: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub ticker: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// Written before a command does any work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Vec<(String, String)>,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<InputHash>,
    pub started_at: String,
    /// Run-specific choices worth recording next to the results.
    pub notes: Vec<String>,
}

pub fn manifest_path(dir: &Path, command: &str) -> PathBuf {
    dir.join(format!("manifest-{command}.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileChecksum {
    pub path: String,
    pub sha256: String,
}

/// Checksums of every file in the run directory, refreshed when a command
/// finishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checksums {
    pub finished_at: String,
    pub files: Vec<FileChecksum>,
}

pub fn write_checksums(dir: &Path) -> Result<Checksums, CliError> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != CHECKSUMS_FILE)
        .collect();
    names.sort();
    let files = names
        .into_iter()
        .map(|name| Ok(FileChecksum { sha256: sha256_hex(&read_bytes(&dir.join(&name))?), path: name }))
        .collect::<Result<Vec<_>, CliError>>()?;
    let sums = Checksums { finished_at: chrono::Utc::now().to_rfc3339(), files };
    write_json(&dir.join(CHECKSUMS_FILE), &sums)?;
    Ok(sums)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorFile {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn params_to_file(p: &ParamSet) -> Vec<TensorFile> {
    p.iter()
        .map(|(name, t)| TensorFile { name: name.to_string(), shape: t.shape().to_vec(), data: t.data().to_vec() })
        .collect()
}

fn params_from_file(tensors: &[TensorFile]) -> Result<ParamSet, CliError> {
    let mut p = ParamSet::new();
    for t in tensors {
        p.insert(&t.name, Tensor::new(t.shape.clone(), t.data.clone())?)?;
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerFile {
    pub name: String,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<TensorFile>,
    pub v: Vec<TensorFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub agent: String,
    pub config_hash: String,
    /// False when training stopped early.
    pub complete: bool,
    pub episodes: usize,
    pub params: Vec<(String, Vec<TensorFile>)>,
    pub optimizers: Vec<OptimizerFile>,
    pub vectors: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(agent: &str, config_hash: &str, complete: bool, episodes: usize, state: &AgentState) -> Self {
        Self {
            agent: agent.to_string(),
            config_hash: config_hash.to_string(),
            complete,
            episodes,
            params: state.params.iter().map(|(n, p)| (n.clone(), params_to_file(p))).collect(),
            optimizers: state
                .optimizers
                .iter()
                .map(|(n, o)| {
                    let c = o.config();
                    OptimizerFile {
                        name: n.clone(),
                        step: o.step(),
                        beta1: c.beta1,
                        beta2: c.beta2,
                        eps: c.eps,
                        m: params_to_file(o.first_moment()),
                        v: params_to_file(o.second_moment()),
                    }
                })
                .collect(),
            vectors: state.vectors.clone(),
        }
    }

    pub fn state(&self) -> Result<AgentState, CliError> {
        Ok(AgentState {
            params: self
                .params
                .iter()
                .map(|(n, p)| Ok((n.clone(), params_from_file(p)?)))
                .collect::<Result<_, CliError>>()?,
            optimizers: self
                .optimizers
                .iter()
                .map(|o| {
                    let config = AdamConfig { beta1: o.beta1, beta2: o.beta2, eps: o.eps };
                    let state =
                        AdamState::from_parts(params_from_file(&o.m)?, params_from_file(&o.v)?, o.step, config)?;
                    Ok((o.name.clone(), state))
                })
                .collect::<Result<_, CliError>>()?,
            vectors: self.vectors.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use folio_core::synth::{generate, SynthAsset};

    #[test]
    fn frame_roundtrip() {
        let start = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
        let series = generate(&[SynthAsset::new("A", 0.001, 0.02), SynthAsset::new("B", 0.0, 0.01)], start, 12, 3);
        let frame = folio_core::data::align_frames(series, 2).unwrap();
        let file = FrameFile::from_frame(&frame);
        let text = serde_json::to_string(&file).unwrap();
        let back: FrameFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_frame().unwrap(), frame);
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(vec![2, 2], vec![0.1, -1.0 / 3.0, 1e-300, 7.25]).unwrap()).unwrap();
        let opt = AdamState::new(&p);
        let state = AgentState {
            params: vec![("actor".into(), p)],
            optimizers: vec![("actor".into(), opt)],
            vectors: vec![("noise".into(), vec![0.5, -2.0 / 7.0])],
        };
        let ck = Checkpoint::new("ddpg", "abc", true, 3, &state);
        let text = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back.state().unwrap(), state);
    }
}
