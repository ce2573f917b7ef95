use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("no feasible placement found after exploring {explored} search nodes")]
    Infeasible { explored: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("schema mismatch in column `{column}`: {reason}")]
    Schema { column: String, reason: String },

    #[error("no depth reaches the error threshold {threshold}")]
    RangeNotFound { threshold: f64 },

    #[error("misaligned strategy results: {0}")]
    Misaligned(String),

    #[error(
        "stage 1 failed: best invalid-prediction rate {best_rate:.4} at depth {best_depth} \
         exceeds threshold {threshold} with upper bound capped at {upper_bound}"
    )]
    ThresholdUnreachable {
        best_rate: f64,
        best_depth: i64,
        threshold: f64,
        upper_bound: i64,
    },

    #[error("objective evaluation failed at h={h}: {source}")]
    Objective {
        h: i64,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
