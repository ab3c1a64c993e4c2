//! Exit-code contract: 0 success, 1 assertion/run failure, 2 usage error.

use std::fmt;

/// A command failure, split by exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// Bad invocation: unknown subcommand or key, malformed config, bad
    /// value. Exit code 2.
    Usage(String),
    /// The run itself failed: a checked property did not hold, an input
    /// file was unreadable, or a core operation rejected its arguments.
    /// Exit code 1.
    Run(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn run(msg: impl Into<String>) -> Self {
        CliError::Run(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Run(msg) => write!(f, "error: {msg}"),
        }
    }
}

impl From<ylab_core::Error> for CliError {
    fn from(err: ylab_core::Error) -> Self {
        CliError::Run(err.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Run(err.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
