use std::path::PathBuf;

use bl_core::BlError;
use thiserror::Error;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Validation = 2,
    Parse = 3,
    Optimizer = 4,
    Violation = 5,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid document: {0}")]
    Document(String),
    #[error(transparent)]
    Core(#[from] BlError),
}

impl CliError {
    pub fn exit(&self) -> Exit {
        match self {
            CliError::Io { .. } | CliError::Parse { .. } => Exit::Parse,
            CliError::Document(_) => Exit::Validation,
            CliError::Core(e) => match e {
                BlError::IterationCap { .. } | BlError::Lp(_) => Exit::Optimizer,
                _ => Exit::Validation,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
