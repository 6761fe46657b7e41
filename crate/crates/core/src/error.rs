use thiserror::Error;

use crate::client::ClientError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("numerical failure in group {group_id}: {detail}")]
    NumericalFailure { group_id: String, detail: String },

    #[error("insufficient {label} pool: need {needed}, have {available} (shortfall {shortfall})")]
    InsufficientPool {
        label: String,
        needed: usize,
        available: usize,
        shortfall: usize,
    },

    #[error("parse error at {location}: {detail}")]
    Parse { location: String, detail: String },

    #[error(transparent)]
    Client(#[from] ClientError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
