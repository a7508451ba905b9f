use std::path::Path;

use thiserror::Error;

/// Failures of the command line, grouped by process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<sbm_core::Error> for CliError {
    fn from(e: sbm_core::Error) -> Self {
        use sbm_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) => CliError::Config(msg),
            E::Contract(_) => CliError::Usage(msg),
            E::NonFinite(_) | E::Domain { .. } => CliError::Numeric(msg),
            E::Dimension { .. } | E::Input(_) | E::Metric(_) | E::Snapshot(_) => CliError::Data(msg),
        }
    }
}
