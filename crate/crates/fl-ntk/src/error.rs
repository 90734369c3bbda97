use std::io;
use std::path::PathBuf;

use fl_ntk_core::Error as CoreError;
use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const IO: i32 = 2;
    pub const DIVERGED: i32 = 3;
    pub const DEGENERATE: i32 = 4;
    /// An asserted audit failed on more seeds than the majority rule allows.
    pub const AUDIT_FAILED: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Format { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        CliError::Format { path: path.into(), line, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => exit::USAGE,
            CliError::Io { .. } | CliError::Format { .. } => exit::IO,
            CliError::Core(e) => match e {
                CoreError::Diverged { .. } | CoreError::LocalDivergence { .. } => exit::DIVERGED,
                CoreError::DegenerateSpectrum { .. } | CoreError::NotPositiveDefinite { .. } => exit::DEGENERATE,
                _ => exit::USAGE,
            },
        }
    }
}
