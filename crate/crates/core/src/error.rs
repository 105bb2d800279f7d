use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: missing column `{column}`")]
    MissingColumn { line: usize, column: String },

    #[error("line {line}, column `{column}`: {reason}")]
    BadValue {
        line: usize,
        column: String,
        reason: String,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty input")]
    EmptyInput,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("value {0} outside [0, 1]")]
    OutOfRange(f64),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("duplicate model id `{0}`")]
    DuplicateModelId(String),

    #[error("model `{model}`: invalid hyperparameter: {reason}")]
    InvalidHyperparameter { model: String, reason: String },

    #[error("record has no label")]
    MissingLabel,

    #[error("prediction group mixes patient ids `{0}` and `{1}`")]
    MixedPatientIds(String, String),

    #[error("patient `{patient}`: duplicate prediction from model `{model}`")]
    DuplicateModel { patient: String, model: String },

    #[error("patient `{patient}`: expected {expected} predictions, got {got}")]
    IncompleteGroup {
        patient: String,
        expected: usize,
        got: usize,
    },

    #[error("malformed wire line: {0}")]
    BadWireLine(String),

    #[error("bundle: {0}")]
    BundleLoad(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

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
