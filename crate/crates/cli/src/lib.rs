//! Everything the style-transfer engine needs an operating system for:
//! run configuration, image files, checkpoints, the training runner, and
//! the command implementations behind the `peerstyle` binary.

pub mod checkpoint;
pub mod config;
pub mod imageio;
pub mod runner;

use thiserror::Error;

/// Application-level failures, split by who has to fix them: the command
/// line (exit 1), the configuration (exit 2), or the run itself (exit 3).
#[derive(Debug, Error)]
pub enum AppError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl AppError {
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Config(_) => 2,
            AppError::Runtime(_) => 3,
        }
    }

    /// An IO failure annotated with the file it concerns.
    pub fn io(context: &str, err: std::io::Error) -> AppError {
        AppError::Runtime(format!("{context}: {err}"))
    }
}

impl From<peerstyle_core::Error> for AppError {
    fn from(err: peerstyle_core::Error) -> AppError {
        match err {
            peerstyle_core::Error::Config(msg) => AppError::Config(msg.to_string()),
            other => AppError::Runtime(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
