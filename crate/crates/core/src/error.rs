use std::path::PathBuf;

use dcr_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DcrError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("non-finite loss {value} for instance {instance_id}")]
    NonFiniteLoss { instance_id: String, value: f64 },
    #[error("{path}: bad magic {found:?}")]
    BadMagic { path: PathBuf, found: Vec<u8> },
    #[error("{path}: unsupported format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

impl DcrError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DcrError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        DcrError::Json {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by bad user configuration rather than numerics or IO.
    pub fn is_config(&self) -> bool {
        matches!(self, DcrError::Config(_) | DcrError::Json { .. })
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, DcrError::NonFiniteLoss { .. })
    }
}

pub type Result<T> = std::result::Result<T, DcrError>;
