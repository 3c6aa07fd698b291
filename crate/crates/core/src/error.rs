use gqnloc_nn::NnError;
use gqnloc_world::WorldError;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty context: {0}")]
    EmptyContext(&'static str),
    #[error("train-mode rollout needs a target image")]
    MissingTarget,
    #[error("checkpoint holds a {found} model, expected {expected}")]
    WrongModel { expected: String, found: String },
    #[error("checkpoint model config does not match: {0}")]
    ConfigMismatch(String),
    #[error("non-finite loss at iteration {iteration}; last good checkpoint kept")]
    NonFiniteLoss { iteration: u64 },
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CoreError + '_ {
    move |source| CoreError::Io { path: path.to_path_buf(), source }
}
