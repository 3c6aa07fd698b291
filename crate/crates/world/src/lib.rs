//! Procedural voxel worlds standing in for a game engine: terrain generation,
//! raycast rendering, the blind random-walk policy that records labelled
//! episodes, and the on-disk episode format.

pub mod dataset;
pub mod error;
pub mod noise;
pub mod pose;
pub mod render;
pub mod walk;
pub mod world;

pub use dataset::{
    generate_episodes, read_dataset, sample_task, write_dataset, Dataset, DatasetPaths, GenerationPlan, GenerationReport, SplitKind,
    SplitManifest, Task,
};
pub use error::{Result, WorldError};
pub use pose::{wrap_yaw, yaw_difference, CameraPose};
pub use render::{render_frame, Image, RenderConfig};
pub use walk::{
    denormalize_episode_poses, episode_valid, normalize_episode_poses, random_walk_episode, Episode, Frame,
    ValidityThresholds, WalkConfig, WalkStats, FRAMES_PER_EPISODE,
};
pub use world::{generate_world, Block, VoxelWorld, WorldParams};
