use nicsim_core::analytic::FitError;
use nicsim_core::engine::EngineError;
use nicsim_core::{ConfigError, SimError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    /// 2: bad input, 3: protocol corruption or invariant failure, 4: event budget.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Csv(_) => 2,
            CliError::Sim(e) => match e {
                SimError::Config(_) | SimError::Schedule(_) => 2,
                SimError::Engine(EngineError::BudgetExceeded { .. }) => 4,
                _ => 3,
            },
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<nicsim_core::schedule::ScheduleError> for CliError {
    fn from(e: nicsim_core::schedule::ScheduleError) -> Self {
        CliError::Config(e.to_string())
    }
}
