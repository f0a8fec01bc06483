use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("size mismatch: {0}")]
    Size(String),

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while parsing IDX files.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated IDX payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("IDX count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("trailing bytes after IDX payload: {0}")]
    TrailingBytes(usize),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad checkpoint magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {0}")]
    Version(u32),

    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),

    #[error("checkpoint block length mismatch: expected {expected}, found {found}")]
    BlockLength { expected: u64, found: u64 },

    #[error("unknown activation tag {0}")]
    ActivationTag(u8),

    #[error("{0} trailing bytes after checkpoint payload")]
    TrailingBytes(usize),

    #[error("invalid checkpoint contents: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },

    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },

    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
}
