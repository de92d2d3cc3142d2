use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Backward called without a matching forward, or after the mesh changed.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error(transparent)]
    Load(#[from] LoadError),

    #[error("checkpoint parse error at line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Failures while reading IDX image/label containers.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: bad magic number 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated file, expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("item count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: label {label} at index {index} is outside 0..=9")]
    BadLabel {
        path: PathBuf,
        index: usize,
        label: u8,
    },
}

impl Error {
    /// Short stable tag used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::Index(_) => "index",
            Error::Shape(_) => "shape",
            Error::Contract(_) => "contract",
            Error::Divergence(_) => "divergence",
            Error::Load(LoadError::Open { .. }) => "missing-file",
            Error::Load(_) => "load",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}
