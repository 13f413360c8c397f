use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid UTF-8 in {path} at byte offset {offset}")]
    Utf8 { path: PathBuf, offset: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate document id {0}")]
    DuplicateId(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("sample target of {target} words exceeds the {available} words available")]
    SampleTooLarge { target: u64, available: u64 },
    #[error("vocabulary budget {budget} is below the minimum feasible budget {minimum}")]
    BudgetTooSmall { budget: usize, minimum: usize },
    #[error("token id {id} at position {position} is out of range for vocabulary of {vocab_size}")]
    IdOutOfRange {
        id: u32,
        position: usize,
        vocab_size: usize,
    },
    #[error("shape mismatch for {name}: expected {expected:?}, got {actual:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("state error: {0}")]
    State(String),
    #[error("tokenizer fingerprint mismatch: checkpoint has {expected}, tokenizer has {actual}")]
    FingerprintMismatch { expected: String, actual: String },
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: u64, loss: f64 },
    #[error("data error in example {example}: {message}")]
    Data { example: String, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Utf8 { .. } => "utf8",
            Error::EmptyCorpus => "empty-corpus",
            Error::DuplicateId(_) => "duplicate-id",
            Error::Config(_) | Error::BudgetTooSmall { .. } => "config",
            Error::InvalidInput(_) | Error::SampleTooLarge { .. } => "input",
            Error::IdOutOfRange { .. } => "id-range",
            Error::Shape { .. } => "shape",
            Error::State(_) => "state",
            Error::FingerprintMismatch { .. } => "fingerprint",
            Error::NonFiniteLoss { .. } => "nan-loss",
            Error::Data { .. } => "data",
            Error::Format(_) | Error::Json(_) | Error::Csv(_) => "format",
        }
    }
}
