use std::path::PathBuf;

use obsprune::PruneError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Prune(#[from] PruneError),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    /// A pruner result disagreed with its oracle or a checked bound failed.
    #[error("check failed: {0}")]
    Disagreement(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 0 success, 2 usage or config, 3 numerical failure, 4 disagreement.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Prune(e) if e.is_numerical() || matches!(e, PruneError::ContractViolation { .. }) => 3,
            CliError::Prune(_) => 2,
            CliError::Disagreement(_) => 4,
        }
    }
}
