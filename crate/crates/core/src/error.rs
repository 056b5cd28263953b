use thiserror::Error;

#[derive(Debug, Error)]
pub enum SfhnError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: String, reason: String },

    #[error("eigen-solve failed for mode {mode}: {reason}")]
    EigenSolve { mode: usize, reason: String },

    #[error("dimension mismatch: expected {expected} modes, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unsupported fast path: {0}")]
    UnsupportedFastPath(String),

    #[error("non-finite state in interval {interval} (t = {time})")]
    BlowUp { interval: i64, time: f64 },

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl SfhnError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SfhnError::InvalidParam {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SfhnError>;
