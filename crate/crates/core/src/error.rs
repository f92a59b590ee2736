use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown grid quadrant {0:?}")]
    UnknownQuadrant(String),

    #[error("series lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },

    #[error("correlation undefined: {0} has zero variance")]
    UndefinedCorrelation(&'static str),

    #[error("poll {poll_id} is {status} and cannot accept this transition")]
    StateViolation { poll_id: String, status: String },

    #[error("non-finite linear predictor in group {group}, row {row}")]
    NonFiniteLinearPredictor { group: String, row: usize },

    #[error("row is missing feature {0:?}")]
    MissingFeature(String),

    #[error("confusion matrix is empty or not square")]
    EmptyConfusion,

    #[error("no analyzable rows after cleaning and assembly")]
    NoAnalyzableRows,

    #[error("{path}: schema rejected: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("store file {file}, line {line}: {message}")]
    StoreCorrupt {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id {0}")]
    DuplicateId(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
