//! Daily OHLCV files: `date,open,high,low,close,volume`, one row per day.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use folio_core::data::{BarViolation, OhlcvBar};
use folio_core::NaiveDate;
use thiserror::Error;

const HEADER: [&str; 6] = ["date", "open", "high", "low", "close", "volume"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("no data file for {ticker}: {} does not exist", path.display())]
    MissingFile { ticker: String, path: PathBuf },
    #[error("{}:{line}: {reason}", path.display())]
    MalformedRow { path: PathBuf, line: u64, reason: String },
    #[error("{}:{line}: date does not come after the previous row", path.display())]
    NonMonotoneDates { path: PathBuf, line: u64 },
    #[error("{}:{line}: {violation}", path.display())]
    InvariantViolation { path: PathBuf, line: u64, violation: BarViolation },
    #[error("reading {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

pub fn load_ohlcv_csv(path: &Path, ticker: &str) -> Result<Vec<OhlcvBar>, IngestError> {
    if !path.is_file() {
        return Err(IngestError::MissingFile { ticker: ticker.to_string(), path: path.to_path_buf() });
    }
    let file = File::open(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    parse_ohlcv(file, path)
}

/// Parses CSV text; `path` is only used in error messages.
pub fn parse_ohlcv<R: Read>(input: R, path: &Path) -> Result<Vec<OhlcvBar>, IngestError> {
    let malformed = |line: u64, reason: String| IngestError::MalformedRow { path: path.to_path_buf(), line, reason };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header = reader.headers().map_err(|e| malformed(1, e.to_string()))?;
    if header.iter().ne(HEADER) {
        return Err(malformed(1, format!("expected header {}", HEADER.join(","))));
    }
    let mut bars: Vec<OhlcvBar> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != HEADER.len() {
            return Err(malformed(line, format!("expected {} fields, found {}", HEADER.len(), record.len())));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| malformed(line, format!("bad date {:?}: {e}", &record[0])))?;
        let mut values = [0.0; 5];
        for (k, v) in values.iter_mut().enumerate() {
            let field = &record[k + 1];
            *v = field.parse().map_err(|_| malformed(line, format!("bad {} value {field:?}", HEADER[k + 1])))?;
        }
        let bar =
            OhlcvBar { date, open: values[0], high: values[1], low: values[2], close: values[3], volume: values[4] };
        bar.validate().map_err(|violation| IngestError::InvariantViolation {
            path: path.to_path_buf(),
            line,
            violation,
        })?;
        if bars.last().is_some_and(|prev| prev.date >= date) {
            return Err(IngestError::NonMonotoneDates { path: path.to_path_buf(), line });
        }
        bars.push(bar);
    }
    Ok(bars)
}

/// Writes bars in the format [`load_ohlcv_csv`] reads.
pub fn write_ohlcv_csv(path: &Path, bars: &[OhlcvBar]) -> Result<(), IngestError> {
    let io = |source: std::io::Error| IngestError::Io { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(HEADER).map_err(|e| io(e.into()))?;
    for b in bars {
        w.write_record([
            b.date.format("%Y-%m-%d").to_string(),
            b.open.to_string(),
            b.high.to_string(),
            b.low.to_string(),
            b.close.to_string(),
            b.volume.to_string(),
        ])
        .map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}
