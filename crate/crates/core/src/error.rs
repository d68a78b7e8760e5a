use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("finite-difference oracle failed: {0}")]
    OracleFailure(String),
    #[error("resource exhausted: {0}")]
    Resource(String),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(format!($($arg)*))
    };
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::error::Error::InvalidArgument(format!($($arg)*)));
        }
    };
}

pub(crate) use ensure;
pub(crate) use invalid;
