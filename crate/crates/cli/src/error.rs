use std::path::Path;

use gqnloc_core::CoreError;
use gqnloc_nn::NnError;
use gqnloc_world::WorldError;

/// Failures sorted by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    MissingInput(String),
    #[error("{0}")]
    Numerical(String),
    /// Anything else: unwritable outputs, corrupt files, unreachable quotas.
    #[error("{0}")]
    Failure(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::MissingInput(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Failure(_) => 4,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput(format!("{}: not found", path.display()))
        } else {
            CliError::Failure(format!("{}: {e}", path.display()))
        }
    }
}

impl From<WorldError> for CliError {
    fn from(e: WorldError) -> Self {
        match e {
            WorldError::Io { path, source } => CliError::io(&path, source),
            WorldError::InvalidParams(_) | WorldError::InvalidRender(_) | WorldError::InvalidTask(_) => {
                CliError::Usage(e.to_string())
            }
            WorldError::ResolutionMismatch { .. } => CliError::Usage(e.to_string()),
            other => CliError::Failure(other.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite { .. } | NnError::NonFiniteGradient { .. } => CliError::Numerical(e.to_string()),
            NnError::Io(source) if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::MissingInput(source.to_string())
            }
            other => CliError::Failure(other.to_string()),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Nn(e) => e.into(),
            CoreError::World(e) => e.into(),
            CoreError::Io { path, source } => CliError::io(&path, source),
            CoreError::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
            CoreError::Config(_) | CoreError::WrongModel { .. } | CoreError::EmptyContext(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Failure(other.to_string()),
        }
    }
}
