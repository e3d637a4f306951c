use thiserror::Error;

/// Failures raised by validation and by the key-rate pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("`{field}` out of range: {reason}")]
    OutOfRange { field: &'static str, reason: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no secure key: {0}")]
    NoSecureKey(String),

    #[error("missing field `{0}`")]
    MissingField(&'static str),

    #[error("length mismatch: schedule has {schedule} pulses, event log has {events}")]
    LengthMismatch { schedule: usize, events: usize },

    #[error("optimized key rate is not positive at zero distance")]
    ZeroRange,

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn out_of_range(field: &'static str, reason: impl Into<String>) -> Self {
        Error::OutOfRange {
            field,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
