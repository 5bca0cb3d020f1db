use std::io;
use std::path::PathBuf;

use choreo_core::CoreError;

/// Problems with the bytes of a motion or checkpoint file.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("not a {expected} file")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    Version(String),
    #[error("header line {line}: {msg}")]
    Header { line: usize, msg: String },
    #[error("file ends {missing} bytes early")]
    Truncated { missing: usize },
    #[error("{0} unexpected bytes after the last block")]
    TrailingBytes(usize),
    #[error("non-finite value at offset {0}")]
    NonFinite(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {}: {source}", path.display())]
    Input { path: PathBuf, source: io::Error },
    #[error("cannot write {}: {source}", path.display())]
    Output { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
    #[error("config {}: {msg}", path.display())]
    Config { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("gradient check failed: max relative error {0:e}")]
    GradCheck(f64),
}

impl AppError {
    /// 1 for anything wrong with what the user supplied, 2 for failures
    /// while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) | AppError::Input { .. } | AppError::Format { .. } | AppError::Config { .. } => 1,
            AppError::Core(
                CoreError::InvalidConfig(_) | CoreError::ShapeMismatch(_) | CoreError::InvalidLength(_) | CoreError::InvalidStep(_),
            ) => 1,
            AppError::Core(_) | AppError::Output { .. } | AppError::GradCheck(_) => 2,
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;
