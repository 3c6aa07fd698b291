//! Camera re-localization with implicit maps: a generative query network
//! with patch attention, its discriminative reversal, grid-search
//! localization, evaluation metrics and training loops.

pub mod bins;
pub mod config;
pub mod data;
pub mod discriminative;
pub mod error;
pub mod generative;
pub mod gradcheck;
pub mod localizer;
pub mod nets;
pub mod pose;
pub mod trainer;

pub use config::{CheckpointMeta, ModelConfig, ModelKind, TrainConfig};
pub use error::{CoreError, Result};
