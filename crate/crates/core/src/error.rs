use std::path::PathBuf;

use natlab_compute::ComputeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NatError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("numeric abort: {0}")]
    Numeric(String),
    #[error(transparent)]
    Compute(#[from] ComputeError),
}

impl NatError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            NatError::Config(_) | NatError::Invalid(_) | NatError::Compute(_) => 2,
            NatError::Numeric(_) => 3,
            NatError::Parse { .. } | NatError::Io { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, NatError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(NatError::Invalid(msg.into()))
}
