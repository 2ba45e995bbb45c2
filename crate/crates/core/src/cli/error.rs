use thiserror::Error;

use super::config::ConfigError;
use crate::finance::FinanceError;
use crate::kernels::KernelError;
use crate::oracle::OracleError;
use crate::replicator::ReplicatorError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("invariant failure: {0}")]
    Invariant(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 0 success, 1 validation, 2 invariant failure, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Validation(_) | CliError::Io(_) => 1,
            CliError::Invariant(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ReplicatorError> for CliError {
    fn from(e: ReplicatorError) -> Self {
        match e {
            ReplicatorError::Math(_) | ReplicatorError::NotPositive { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Replicator(inner) => inner.into(),
            OracleError::Singular | OracleError::RankDeficient { .. } | OracleError::Math(_) => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<FinanceError> for CliError {
    fn from(e: FinanceError) -> Self {
        match e {
            FinanceError::Replicator(inner) => inner.into(),
            FinanceError::KernelGrowth { .. } => CliError::Invariant(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
