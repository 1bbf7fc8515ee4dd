use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum CbfError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("query ({x}, {y}) lies outside the field domain")]
    OutOfDomain { x: f64, y: f64 },

    #[error("no membership-feasible schedule found: {0}")]
    Infeasible(String),

    #[error("corrupt field file: {0}")]
    CorruptFile(String),

    #[error("field format mismatch: {0}")]
    VersionMismatch(String),

    #[error("provenance mismatch: field hash {field}, scenario hash {scenario}")]
    Provenance { field: String, scenario: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CbfError {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CbfError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CbfError>;
