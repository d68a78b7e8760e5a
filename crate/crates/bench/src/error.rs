use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("resource error: {0}")]
    Resource(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("check failed: {0}")]
    Check(String),
}

impl BenchError {
    /// Process exit code: 1 check failure, 2 config error, 3 resource error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Check(_) => 1,
            Self::Config(_) => 2,
            Self::Resource(_) | Self::Io { .. } => 3,
        }
    }
}

impl From<itsa_core::Error> for BenchError {
    fn from(e: itsa_core::Error) -> Self {
        match e {
            itsa_core::Error::InvalidArgument(m) => Self::Config(m),
            itsa_core::Error::Resource(m) => Self::Resource(m),
            itsa_core::Error::OracleFailure(m) => Self::Check(m),
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
