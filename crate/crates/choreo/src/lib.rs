//! File formats, checkpoints, plots, run configuration and the command-line
//! driver around `choreo-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod format;
pub mod plot;

pub use error::{AppError, AppResult, FormatError};
pub use format::{read_motion, write_motion, MotionFile};
