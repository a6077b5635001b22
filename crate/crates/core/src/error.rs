use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid design space: {0}")]
    InvalidSpace(String),

    #[error("parameter `{name}` = {value} outside [{lower}, {upper}]")]
    OutOfBounds {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("column `{column}` has zero variance")]
    DegenerateColumn { column: String },

    #[error("insufficient data: need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("value {value} outside the invertible domain of the output transform for column {column}")]
    Domain { column: usize, value: f64 },

    #[error("kernel matrix is ill-conditioned: Cholesky failed with jitter up to {max_jitter:e}")]
    IllConditioned { max_jitter: f64 },

    #[error("non-finite objective at epoch {epoch}, batch {batch} (gradient norm {grad_norm:e})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        grad_norm: f64,
    },

    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse: {0}")]
    Parse(String),
}

impl Error {
    /// Short stable identifier used in machine-parseable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::InvalidSpace(_) => "invalid-space",
            Error::OutOfBounds { .. } => "out-of-bounds",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::DegenerateColumn { .. } => "degenerate-column",
            Error::InsufficientData { .. } => "insufficient-data",
            Error::Domain { .. } => "domain",
            Error::IllConditioned { .. } => "ill-conditioned-kernel",
            Error::NonFinite { .. } => "non-finite",
            Error::Row { source, .. } => source.kind(),
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Parse(_) => "parse",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
