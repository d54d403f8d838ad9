//! Command implementations behind the `vaebm-lab` binary.

pub mod commands;
pub mod config;
pub mod svg;

use std::path::PathBuf;

pub use commands::Layout;
pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("refusing to overwrite {} (pass --force)", .0.display())]
    Exists(PathBuf),
    #[error("missing prerequisite {}: {hint}", path.display())]
    Missing { path: PathBuf, hint: &'static str },
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error(transparent)]
    Core(vaebm::Error),
}

impl From<vaebm::Error> for CliError {
    fn from(e: vaebm::Error) -> Self {
        if e.is_divergence() {
            CliError::Divergence(e.to_string())
        } else {
            CliError::Core(e)
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(vaebm::Error::Io(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Exists(_) => 2,
            CliError::Missing { .. } => 3,
            CliError::Divergence(_) => 4,
            CliError::Core(_) => 1,
        }
    }
}
