use alloc::string::String;

pub type Result<T> = core::result::Result<T, CoreError>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid diffusion step {0}")]
    InvalidStep(usize),
    #[error("invalid length: {0}")]
    InvalidLength(String),
    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
}

/// `ShapeMismatch` with a formatted message.
macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::CoreError::ShapeMismatch(alloc::format!($($arg)*))
    };
}

/// `InvalidConfig` with a formatted message.
macro_rules! config_err {
    ($($arg:tt)*) => {
        $crate::error::CoreError::InvalidConfig(alloc::format!($($arg)*))
    };
}

pub(crate) use config_err;
pub(crate) use shape_err;
