use std::fmt;

/// Top-level failure classes, mapped to process exit codes: usage errors
/// exit 1, data/runtime errors exit 2.
#[derive(Debug)]
pub enum AppError {
    Usage(String),
    Data(String),
}

impl AppError {
    pub fn usage(msg: impl Into<String>) -> AppError {
        AppError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> AppError {
        AppError::Data(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Usage(m) => write!(f, "usage error: {m}"),
            AppError::Data(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for AppError {}

impl From<layoutseq_core::Error> for AppError {
    fn from(e: layoutseq_core::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
