use std::fmt;

use crate::aerp::TokenId;

/// A single field-level problem found while validating a run configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape, budget or parameter that cannot describe a physical system.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid configuration:\n{}", join_fields(.0))]
    InvalidConfig(Vec<FieldError>),

    /// Controller received a command it cannot execute (e.g. an out-of-range slot).
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("token {0} is not resident")]
    CacheMiss(TokenId),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error at line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("capacity exceeded: need {required} bytes of DRAM, {available} available")]
    Capacity { required: u64, available: u64 },

    #[error("report schema mismatch: {0} vs {1}")]
    SchemaMismatch(String, String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn join_fields(fields: &[FieldError]) -> String {
    fields
        .iter()
        .map(|f| format!("  {f}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
