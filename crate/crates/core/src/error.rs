use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("episode {id}: {message}")]
    InvalidEpisode { id: String, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("episode {id} too short: length {length}, need at least {required}")]
    EpisodeTooShort {
        id: String,
        length: usize,
        required: usize,
    },

    #[error("{what} out of range: {value} not in [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: usize,
        min: usize,
        max: usize,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error("metric undefined: {0}")]
    DegenerateScores(&'static str),

    #[error("calibration period {period} ({start}..={end}) has no validation prefixes")]
    EmptyPeriod {
        period: usize,
        start: usize,
        end: usize,
    },

    #[error("monitor for episode {0} already stopped; no further steps accepted")]
    MonitorTerminated(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable category.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => "parse",
            Error::EmptyDataset | Error::InvalidEpisode { .. } | Error::EpisodeTooShort { .. } => "data",
            Error::DimensionMismatch { .. } | Error::OutOfRange { .. } => "shape",
            Error::Config(_) => "config",
            Error::NonFinite(_) | Error::Diverged { .. } => "numeric",
            Error::DegenerateScores(_) => "metric",
            Error::EmptyPeriod { .. } => "calibration",
            Error::MonitorTerminated(_) => "monitor",
            Error::Checkpoint(_) => "checkpoint",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
