use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A computation produced a non-finite value or otherwise left the
    /// numeric domain it was specified for.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An operation was applied to an object whose internal state does not
    /// admit it (e.g. rolling a cache back to a point it never reached).
    #[error("state error: {0}")]
    State(String),

    /// Underlying I/O failure while reading or writing an artifact.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A serialized artifact failed validation while being read back.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
