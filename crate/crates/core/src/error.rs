use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("column `{0}` not found in data")]
    MissingColumn(String),

    #[error("row {row}: invalid outcome `{value}` (counts must be nonnegative integers)")]
    InvalidOutcome { row: usize, value: String },

    #[error("row {row}: missing or non-numeric value in column `{column}`")]
    InvalidValue { row: usize, column: String },

    #[error("row {row}: unknown level `{level}` for categorical column `{column}`")]
    UnknownLevel {
        row: usize,
        column: String,
        level: String,
    },

    #[error("covariate `{0}` has zero variance in the fitting data")]
    ZeroVariance(String),

    #[error("empty dataset")]
    EmptyData,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite linear predictor at record {0}")]
    NonFinite(usize),

    #[error("outcome {outcome} exceeds the largest modelled category {max}")]
    OutsideSupport { outcome: usize, max: usize },

    #[error("penalized information matrix is singular; try a larger smoothing parameter")]
    SingularInformation,

    #[error("{0} did not converge")]
    NotConverged(String),

    #[error("every candidate failed: {0}")]
    AllFailed(String),

    #[error("model document: {0}")]
    Persist(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
