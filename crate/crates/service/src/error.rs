use cityagent_core::data::DataError;
use cityagent_core::orchestrator::OrchestratorError;
use cityagent_core::temporal::TemporalError;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Validation(String),
    #[error("{what} {id} not found")]
    NotFound { what: &'static str, id: String },
    #[error("{0} already exists")]
    Conflict(String),
    #[error("{message}")]
    Rejected { status: u16, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
}

/// Wire form of an error: `{"error": {"status", "code", "message"}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ServiceError {
    pub fn io(path: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        ServiceError::Io {
            path: path.to_string(),
            message: err.to_string(),
        }
    }

    pub fn status(&self) -> u16 {
        use OrchestratorError as O;
        match self {
            ServiceError::BadRequest(_) => 400,
            ServiceError::NotFound { .. } => 404,
            ServiceError::Conflict(_) => 409,
            ServiceError::Rejected { status, .. } => *status,
            ServiceError::Io { .. } | ServiceError::Config(_) | ServiceError::Internal(_) => 500,
            ServiceError::Orchestrator(O::UnknownDataset(_)) => 404,
            ServiceError::Orchestrator(O::Payload(_)) => 500,
            ServiceError::Data(DataError::NotFound(_)) => 404,
            ServiceError::Data(DataError::Io { .. } | DataError::Corrupt { .. }) => 500,
            _ => 422,
        }
    }

    pub fn code(&self) -> &'static str {
        use OrchestratorError as O;
        match self {
            ServiceError::BadRequest(_) => "malformed_json",
            ServiceError::Validation(_) => "invalid_request",
            ServiceError::NotFound { .. } => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Rejected { status: 413, .. } => "payload_too_large",
            ServiceError::Rejected { status: 415, .. } => "unsupported_media_type",
            ServiceError::Rejected { status: 405, .. } => "method_not_allowed",
            ServiceError::Rejected { .. } => "rejected",
            ServiceError::Io { .. } => "io",
            ServiceError::Config(_) => "config",
            ServiceError::Internal(_) => "internal",
            ServiceError::Orchestrator(e) => match e {
                O::InvalidPlan(_) => "invalid_plan",
                O::UnboundDataset(_) => "unbound_dataset",
                O::UnknownDataset(_) => "not_found",
                O::UnknownRound(_) => "unknown_round",
                O::UnknownNode(_) => "unknown_node",
                O::MissingInput(_) => "missing_input",
                O::Payload(_) => "payload",
                _ => "analysis_failed",
            },
            ServiceError::Data(DataError::NotFound(_)) => "not_found",
            ServiceError::Data(DataError::Io { .. } | DataError::Corrupt { .. }) => "store",
            ServiceError::Data(_) => "invalid_data",
            ServiceError::Temporal(_) => "analysis_failed",
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            status: self.status(),
            code: self.code().into(),
            message: self.to_string(),
        }
    }
}
