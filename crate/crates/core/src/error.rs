use std::path::PathBuf;

use numcore::NumError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, TslmError>;

/// Broad failure classes; the CLI maps them to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum TslmError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Schema { path: String, message: String },

    #[error("process `{process}`, entity `{entity}`: expected {expected} grid columns, found {actual}")]
    GridColumns {
        process: String,
        entity: String,
        expected: usize,
        actual: usize,
    },

    #[error("line {line}: {message}")]
    Tsv { line: usize, message: String },

    #[error("process `{process}`, entity `{entity}`, step {step}: {message}")]
    Chaining {
        process: String,
        entity: String,
        step: usize,
        message: String,
    },

    #[error("process ids do not align; missing from predictions: {missing_in_pred:?}; missing from gold: {missing_in_gold:?}")]
    ProcessMismatch {
        missing_in_pred: Vec<String>,
        missing_in_gold: Vec<String>,
    },

    #[error("process `{process}`: entity `{entity}` is not aligned between predictions and gold")]
    EntityMismatch { process: String, entity: String },

    #[error("entity `{0}` has no state-0 value")]
    MissingInitialState(String),

    #[error("procedure has no sentences")]
    EmptyProcedure,

    #[error("entity name is empty")]
    EmptyEntity,

    #[error("query of {len} tokens exceeds the maximum length {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("step {step} is outside 0..={n_steps}")]
    StepOutOfRange { step: usize, n_steps: usize },

    #[error("vocabulary has {vocab} entries but the checkpoint embeds {embedding_rows}")]
    VocabMismatch { vocab: usize, embedding_rows: usize },

    #[error("non-finite loss at epoch {epoch}, process `{process}`")]
    NonFiniteLoss { epoch: usize, process: String },

    #[error(transparent)]
    Num(#[from] NumError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl TslmError {
    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        TslmError::Schema { path: path.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TslmError::Io { path: path.into(), source }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            TslmError::Config(_) => ErrorKind::Config,
            TslmError::Num(NumError::InvalidConfig(_)) => ErrorKind::Config,
            TslmError::Num(_) | TslmError::NonFiniteLoss { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}
