use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?} for {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        what: String,
        index: usize,
        size: usize,
    },

    #[error("attention row {row} has every key masked")]
    EmptyAttentionRow { row: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this tape; reset gradients first")]
    BackwardTwice,

    #[error("no masked positions in batch")]
    NoMaskedPositions,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("missing required key `{key}` in {path}")]
    MissingKey { key: String, path: PathBuf },

    #[error("invalid value for `{key}` at {path}:{line}: {msg}")]
    InvalidValue {
        key: String,
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unknown item `{item}` at {path}:{line}")]
    UnknownItem {
        item: String,
        path: PathBuf,
        line: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status: 2 for configuration and input-format problems,
    /// 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::MissingKey { .. }
            | Error::InvalidValue { .. }
            | Error::UnknownItem { .. }
            | Error::Config(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
