use crate::protocol::{ErrorCode, Lifecycle};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown {what} `{id}`")]
    NotFound { what: &'static str, id: String },
    #[error("cannot {action} a {} session", state.as_str())]
    InvalidState { action: String, state: Lifecycle },
    #[error("session is {}, not running", .0.as_str())]
    NotRunning(Lifecycle),
    #[error("another client controls this session")]
    NotController,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("malformed message: {0}")]
    BadMessage(String),
    #[error(transparent)]
    Core(#[from] csa_core::Error),
}

impl ServiceError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ServiceError::NotFound { .. } => ErrorCode::NotFound,
            ServiceError::InvalidState { .. } => ErrorCode::InvalidState,
            ServiceError::NotRunning(_) => ErrorCode::NotRunning,
            ServiceError::NotController => ErrorCode::NotController,
            ServiceError::InvalidInput(_) | ServiceError::Core(_) => ErrorCode::InvalidInput,
            ServiceError::BadMessage(_) => ErrorCode::BadMessage,
        }
    }
}
