use std::io;
use std::path::PathBuf;

use mda_core::MdaError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{failed} of {total} verification checks failed")]
    Verification { failed: usize, total: usize },

    #[error(transparent)]
    Core(#[from] MdaError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 success, 1 verification failure, 2 config error, 3 I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            // Library errors outside a sweep come from invalid game or
            // solver parameters.
            CliError::Core(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
