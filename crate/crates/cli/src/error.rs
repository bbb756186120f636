use std::fmt;

use scm_core::Error as CoreError;

/// Failure categories, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("incompatible inputs: {0}")]
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Io(_) => 4,
            CliError::Data(_) => 5,
            CliError::Numeric(_) => 6,
            CliError::Mismatch(_) => 7,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
            CliError::Mismatch(_) => "mismatch",
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Config(_) => CliError::Config(msg),
            CoreError::Io(_) => CliError::Io(msg),
            CoreError::Parse { .. } | CoreError::Format(_) => CliError::Data(msg),
            CoreError::NumericDomain(_) | CoreError::Domain(_) => CliError::Numeric(msg),
            CoreError::Shape(_) | CoreError::Topology(_) => CliError::Mismatch(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Adds a path or step name to an error message.
pub trait Context<T> {
    fn context(self, what: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for Result<T, E> {
    fn context(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| match e.into() {
            CliError::Config(m) => CliError::Config(format!("{what}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{what}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{what}: {m}")),
            CliError::Mismatch(m) => CliError::Mismatch(format!("{what}: {m}")),
        })
    }
}
