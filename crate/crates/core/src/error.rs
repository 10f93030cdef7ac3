use thiserror::Error;

use crate::engine::EngineError;
use crate::schedule::ScheduleError;

/// Invalid input: presets, experiment configs, model queries.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown platform `{0}`")]
    UnknownPlatform(String),
    #[error("field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("preset file: {0}")]
    Preset(String),
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.into(), reason: reason.into() }
    }
}

/// Failure while running a simulation.
#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("protocol corruption: {0}")]
    ProtocolCorruption(String),
    #[error("rank {rank}: packet to {dst} (link seq {link_seq}) exceeded retry limit {limit}")]
    RetryLimit { rank: usize, dst: usize, link_seq: u64, limit: u32 },
    #[error("contract violation: {0}")]
    Contract(String),
}

impl SimError {
    pub fn corruption(msg: impl Into<String>) -> Self {
        SimError::ProtocolCorruption(msg.into())
    }
}
