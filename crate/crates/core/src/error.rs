use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("reading {index} ({sensor_id} at {timestamp}) lies outside the time grid")]
    ReadingOutsideGrid {
        index: usize,
        sensor_id: String,
        timestamp: String,
    },

    #[error("no readings supplied")]
    NoReadings,

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("invalid lag {lag} for series of length {len}")]
    InvalidLag { lag: usize, len: usize },

    #[error("series length mismatch: {0}")]
    LengthMismatch(String),

    #[error("unknown sensor `{0}`")]
    UnknownSensor(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("I/O error on {path}: {source}")]
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
