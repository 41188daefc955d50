use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Bad input to an operation: shape mismatch, invalid hyperparameter,
    /// unsatisfiable generation constraint. The message carries the
    /// offending dimensions or values.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },

    /// A sampled example cannot be used as-is and the caller should try a
    /// different sequence or window placement.
    #[error("resample required: {0}")]
    Resample(String),

    /// Malformed WAV/RTTM/manifest/config input.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// Corrupt or truncated checkpoint; `field` names the record that
    /// failed to decode.
    #[error("checkpoint format error in field `{field}`: {message}")]
    Checkpoint { field: String, message: String },

    /// DER is undefined because no reference speech remains after
    /// collar/overlap exclusion.
    #[error("DER undefined: zero scored reference speech")]
    UndefinedDer,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { location: location.into(), message: message.into() }
    }

    pub fn checkpoint(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Checkpoint { field: field.into(), message: message.into() }
    }
}
