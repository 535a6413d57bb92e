use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An environment or environment file failed validation. `field` names
    /// the offending JSON field (e.g. `obstacles[3]`).
    #[error("invalid environment: {field}: {reason}")]
    InvalidEnvironment { field: String, reason: String },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid planner input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    #[error("policy/planner mismatch: {0}")]
    PolicyMismatch(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn env(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidEnvironment {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag, used by the CLI error report.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidEnvironment { .. } => "invalid_environment",
            Error::InvalidParams(_) => "invalid_params",
            Error::InvalidInput(_) => "invalid_input",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::InvalidCheckpoint(_) => "invalid_checkpoint",
            Error::PolicyMismatch(_) => "policy_mismatch",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Io(_) => "io",
        }
    }
}
