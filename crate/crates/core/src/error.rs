use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric domain error: {0}")]
    NumericDomain(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("topology mismatch: {0}")]
    Topology(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use shape_err;
