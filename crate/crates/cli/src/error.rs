use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors of the command-line layer, grouped by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("fit did not converge: {0}")]
    NonConvergence(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Model(fluxprobe::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use fluxprobe::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Parse { .. } | CliError::Io { .. } => 3,
            CliError::NonConvergence(_) => 4,
            CliError::Model(e) => match e {
                E::NonConvergence { .. } => 4,
                E::InvalidParam { .. } | E::Config(_) | E::Model(_) | E::Range(_) => 2,
                _ => 3,
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<fluxprobe::Error> for CliError {
    fn from(e: fluxprobe::Error) -> Self {
        CliError::Model(e)
    }
}
