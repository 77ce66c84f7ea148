//! Trace files: one arrival rate (queries per second) per line, one line per
//! interval. Blank lines and `#` comments are ignored.

use std::path::Path;

use cascadesim_core::workload::WorkloadError;
use cascadesim_core::Trace;

#[derive(Debug, thiserror::Error)]
pub enum TraceFileError {
    #[error("cannot read {path}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: `{text}` is not a rate")]
    Parse { line: usize, text: String },
    #[error(transparent)]
    Trace(#[from] WorkloadError),
}

pub fn load_trace(path: &Path, interval_seconds: f64) -> Result<Trace, TraceFileError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| TraceFileError::Io { path: path.display().to_string(), source })?;
    parse_trace(&text, interval_seconds)
}

pub fn parse_trace(text: &str, interval_seconds: f64) -> Result<Trace, TraceFileError> {
    let mut rates = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        let rate = s.parse().map_err(|_| TraceFileError::Parse { line: i + 1, text: s.into() })?;
        rates.push(rate);
    }
    Ok(Trace::new(interval_seconds, rates)?)
}
