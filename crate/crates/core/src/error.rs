use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty stream")]
    EmptyStream,

    #[error("insufficient history: need at least {needed} samples, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("degenerate innovation covariance")]
    DegenerateInnovation,

    #[error("timestamps not strictly increasing in {sensor} stream at t = {t_ms} ms")]
    NonMonotone { sensor: &'static str, t_ms: i64 },

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("stop detection failed at stop {index}: incomplete cluster with support {support} < k1 = {k1}")]
    StopDetection { index: usize, support: usize, k1: usize },

    #[error("stop window {index} is not covered by the track")]
    UncoveredStop { index: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
