#![allow(dead_code)]

pub use gqnloc_core::gradcheck::{random_frames as frames, random_task as task};

/// An episode of random frames; seeds only serve split bookkeeping.
pub fn episode(size: usize, seed: u64) -> gqnloc_world::Episode {
    gqnloc_world::Episode {
        frames: frames(gqnloc_world::FRAMES_PER_EPISODE, size, seed),
        world_seed: seed,
        walk_seed: seed,
        valid: true,
        stats: Default::default(),
        normalization: None,
    }
}
