//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SscError>;

#[derive(Debug, Error)]
pub enum SscError {
    #[error("row {0} has (near-)zero L2 norm")]
    ZeroNormRow(usize),

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no anchor has a nonempty positive set and positive weight")]
    NoValidAnchor,

    #[error("expected {expected} rows (two stacked views), got {actual}")]
    OddRowCount { expected: usize, actual: usize },

    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },

    #[error("confidence threshold must lie in (0, 1), got {0}")]
    TauOutOfRange(f64),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("forward trace does not match parameters or gradient: {0}")]
    TraceMismatch(String),

    #[error("checkpoint format mismatch: {0}")]
    FormatVersionMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bad IDX magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { expected: u32, found: u32 },

    #[error("count mismatch: {0}")]
    CountMismatch(String),

    #[error("file truncated: {0}")]
    TruncatedFile(String),

    #[error("class {class} has {available} examples, need at least {required}")]
    InsufficientClassCount {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(
        "unknown sweep parameter `{0}` (expected tau, mu, strength, t, t_prime or lambda_unconf)"
    )]
    UnknownParameter(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SscError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SscError::Io {
            path: path.into(),
            source,
        }
    }
}
