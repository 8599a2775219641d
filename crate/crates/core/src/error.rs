use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NilmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NilmError {
    /// Shapes, geometry or hyperparameters that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// The API was driven in an order or way it does not support.
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data violates a precondition (empty, non-monotone, constant, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("parse error in {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// NaN or infinity produced by a forward or backward pass.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error categories, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Config,
    Data,
    Numeric,
    Io,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 2,
            ErrorClass::Config => 3,
            ErrorClass::Data => 4,
            ErrorClass::Numeric => 5,
            ErrorClass::Io => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Usage => "usage",
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::Numeric => "numeric",
            ErrorClass::Io => "io",
        }
    }
}

impl NilmError {
    pub fn class(&self) -> ErrorClass {
        match self {
            NilmError::Config(_) => ErrorClass::Config,
            NilmError::Usage(_) => ErrorClass::Usage,
            NilmError::Data(_) | NilmError::Parse { .. } => ErrorClass::Data,
            NilmError::NonFinite(_) => ErrorClass::Numeric,
            NilmError::Io { .. } => ErrorClass::Io,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NilmError::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::NilmError::Config(format!($($arg)*)) };
}
macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::NilmError::Usage(format!($($arg)*)) };
}
macro_rules! data_err {
    ($($arg:tt)*) => { $crate::error::NilmError::Data(format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use data_err;
pub(crate) use usage_err;
