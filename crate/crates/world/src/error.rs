use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("invalid world parameters: {0}")]
    InvalidParams(String),
    #[error("unspawnable world: no dry column above water level {water_level}")]
    Unspawnable { water_level: i32 },
    #[error("camera embedded in solid block at ({x:.2}, {y:.2}, {z:.2})")]
    CameraEmbedded { x: f64, y: f64, z: f64 },
    #[error("invalid render config: {0}")]
    InvalidRender(String),
    #[error("{path}: bad magic bytes, not an episode file")]
    BadMagic { path: PathBuf },
    #[error("{path}: format version {found}, expected {expected}")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: truncated file, expected {expected} bytes but found {found}")]
    Truncated { path: PathBuf, expected: u64, found: u64 },
    #[error("{path}: {found} trailing bytes after the last episode")]
    TrailingBytes { path: PathBuf, found: u64 },
    #[error("resolution mismatch: expected {expected}, found {found}")]
    ResolutionMismatch { expected: usize, found: usize },
    #[error("episode has {found} frames, expected {expected}")]
    FrameCount { expected: usize, found: usize },
    #[error("invalid task request: {0}")]
    InvalidTask(String),
    #[error("split manifest: {0}")]
    Manifest(String),
    #[error("train and test splits share world seed {0}")]
    SplitOverlap(u64),
    #[error("quota unreachable: {valid} valid episodes after {attempts} attempts, wanted {wanted}")]
    QuotaUnreachable { wanted: usize, valid: usize, attempts: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, WorldError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> WorldError + '_ {
    move |source| WorldError::Io { path: path.to_path_buf(), source }
}
