//! Configuration, run directories and experiment orchestration behind the
//! `lfd` command.

pub mod config;
pub mod experiment;
pub mod rundir;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// A configuration value is invalid; the first field names it.
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] lfd_core::Error),
}

impl CliError {
    pub fn field(field: &str, message: impl ToString) -> Self {
        CliError::Field {
            field: field.to_string(),
            message: message.to_string(),
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
