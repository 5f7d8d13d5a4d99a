use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid data: {0}")]
    Invalid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("voyage {0} is degenerate (zero total distance)")]
    DegenerateVoyage(String),

    #[error("record {index} lies outside the weather grid domain ({detail})")]
    OutOfDomain { index: usize, detail: String },

    #[error("fuel model calibration failed: {0}")]
    Calibration(String),

    #[error("efficiency gain undefined for measured score {0}")]
    UndefinedGain(f64),

    #[error("dtw band radius {radius} cannot align sequences of length {n} and {m}")]
    InfeasibleBand { radius: usize, n: usize, m: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("train/test leakage: voyage {0} is in both the test split and a training cluster")]
    Leakage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
