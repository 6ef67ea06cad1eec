use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ItaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {context}: {detail}")]
    ShapeMismatch { context: String, detail: String },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("inner dimension {inner} exceeds the overflow-free bound {bound} for the configured accumulator width")]
    AccumulatorOverflow { inner: usize, bound: usize },

    #[error("softmax row {row} out of range (buffer holds {rows} rows)")]
    RowOutOfRange { row: usize, rows: usize },

    #[error("softmax phase violation on row {row}: {detail}")]
    Phase { row: usize, detail: String },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),

    #[error("config: {0}")]
    Config(String),
}

impl ItaError {
    /// Process exit status: 2 for bad arguments or configuration, 1 for bad
    /// data and failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::InvalidArgument(_) | Self::NonFinite { .. } | Self::AccumulatorOverflow { .. } | Self::Config(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ItaError::Io { path: path.into(), source }
    }

    pub(crate) fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        ItaError::ShapeMismatch { context: context.into(), detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, ItaError>;
