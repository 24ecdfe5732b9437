use crate::events::ValidationReport;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument violated a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The input bytes do not follow the expected file format.
    #[error("format error: {0}")]
    Format(String),

    /// The input ended in the middle of a fixed-size structure.
    #[error("truncated input at byte offset {offset} while reading {what}")]
    Truncated { offset: u64, what: &'static str },

    /// An event stream violated one or more of its invariants.
    #[error("validation failed:\n{0}")]
    Validation(ValidationReport),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Error {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Error {
        Error::Format(msg.into())
    }
}
