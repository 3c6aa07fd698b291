//! Blind random-walk exploration, episode pruning and pose normalization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::noise::splitmix64;
use crate::pose::{clamp_pitch, wrap_yaw, CameraPose};
use crate::render::{render_frame, Image, RenderConfig};
use crate::world::VoxelWorld;

pub const FRAMES_PER_EPISODE: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct WalkConfig {
    pub steps: usize,
    /// Forward distance per step, in blocks.
    pub step_length: f64,
    pub yaw_sigma_deg: f64,
    pub big_rotation_prob: f64,
    /// Big rotations are uniform in plus or minus this many degrees.
    pub big_rotation_deg: f64,
    pub pitch_sigma_deg: f64,
    pub eye_height: f64,
    /// Spawn columns are drawn within this many blocks of the world center.
    pub spawn_radius: f64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            steps: FRAMES_PER_EPISODE,
            step_length: 1.5,
            yaw_sigma_deg: 10.0,
            big_rotation_prob: 0.1,
            big_rotation_deg: 90.0,
            pitch_sigma_deg: 3.0,
            eye_height: 1.62,
            spawn_radius: 24.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WalkStats {
    pub steps: usize,
    /// Big rotations drawn by the random branch, not those forced by obstacles.
    pub random_big_rotations: usize,
    pub jumps: usize,
    pub blocked: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: Image,
    pub pose: CameraPose,
}

/// Affine position map applied at episode finalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseNormalization {
    pub center: [f64; 3],
    pub scale_xy: f64,
    pub scale_z: f64,
}

impl PoseNormalization {
    pub fn apply(&self, p: &CameraPose) -> CameraPose {
        CameraPose {
            x: (p.x - self.center[0]) * self.scale_xy,
            y: (p.y - self.center[1]) * self.scale_xy,
            z: (p.z - self.center[2]) * self.scale_z,
            ..*p
        }
    }

    pub fn invert(&self, p: &CameraPose) -> CameraPose {
        CameraPose {
            x: p.x / self.scale_xy + self.center[0],
            y: p.y / self.scale_xy + self.center[1],
            z: p.z / self.scale_z + self.center[2],
            ..*p
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub frames: Vec<Frame>,
    pub world_seed: u64,
    pub walk_seed: u64,
    pub valid: bool,
    pub stats: WalkStats,
    /// Set once poses have been normalized; `None` means world units.
    pub normalization: Option<PoseNormalization>,
}

impl Episode {
    pub fn resolution(&self) -> usize {
        self.frames.first().map_or(0, |f| f.image.size)
    }

    pub fn poses(&self) -> Vec<CameraPose> {
        self.frames.iter().map(|f| f.pose).collect()
    }
}

fn find_spawn(world: &VoxelWorld, rng: &mut ChaCha8Rng, radius: f64) -> (f64, f64) {
    let c = world.extent as f64 / 2.0;
    for _ in 0..4096 {
        let x = c + rng.random_range(-radius..radius);
        let y = c + rng.random_range(-radius..radius);
        let (ix, iy) = (x.floor() as i32, y.floor() as i32);
        if world.is_dry(ix, iy) && world.ground(ix, iy) == world.column_height(ix, iy) {
            return (ix as f64 + 0.5, iy as f64 + 0.5);
        }
    }
    // Scan from the center outwards; a generated world always has a dry column.
    let e = world.extent as i32;
    let mut best = (c, c);
    let mut best_d = f64::INFINITY;
    for iy in 0..e {
        for ix in 0..e {
            let d = (ix as f64 + 0.5 - c).powi(2) + (iy as f64 + 0.5 - c).powi(2);
            if d < best_d && world.is_dry(ix, iy) {
                best = (ix as f64 + 0.5, iy as f64 + 0.5);
                best_d = d;
            }
        }
    }
    best
}

/// Foot level at a continuous position: ground, or the water surface when swimming.
fn foot_level(world: &VoxelWorld, x: f64, y: f64) -> Option<i32> {
    let (ix, iy) = (x.floor() as i32, y.floor() as i32);
    world.ground(ix, iy).map(|g| g.max(world.water_level))
}

enum Move {
    Walk(f64, f64, i32),
    Jump(f64, f64, i32),
    Blocked,
}

fn try_move(world: &VoxelWorld, x: f64, y: f64, foot: i32, yaw_deg: f64, len: f64) -> Move {
    let (s, c) = yaw_deg.to_radians().sin_cos();
    let mut highest = i32::MIN;
    let mut end = (x, y, foot);
    for k in 1..=3 {
        let f = len * k as f64 / 3.0;
        let (nx, ny) = (x + f * c, y + f * s);
        match foot_level(world, nx, ny) {
            Some(level) => {
                highest = highest.max(level);
                end = (nx, ny, level);
            }
            None => return Move::Blocked,
        }
    }
    if highest <= foot {
        Move::Walk(end.0, end.1, end.2)
    } else if highest == foot + 1 && end.2 == highest {
        Move::Jump(end.0, end.1, end.2)
    } else {
        Move::Blocked
    }
}

/// Runs the exploration policy: a small random rotation and a forward step
/// each iteration, an occasional big rotation, a one-block jump or a big
/// rotation when blocked, and a recorded frame after every step.
pub fn random_walk_episode(world: &VoxelWorld, seed: u64, walk: &WalkConfig, cfg: &RenderConfig) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x5741_4C4B));
    let small = Normal::new(0.0, walk.yaw_sigma_deg).expect("finite sigma");
    let pitch_noise = Normal::new(0.0, walk.pitch_sigma_deg).expect("finite sigma");
    let (mut x, mut y) = find_spawn(world, &mut rng, walk.spawn_radius);
    let mut foot = foot_level(world, x, y).unwrap_or(world.water_level);
    let mut yaw = wrap_yaw(rng.random_range(-180.0..180.0));
    let mut pitch = clamp_pitch(rng.random_range(-5.0..15.0));
    let mut stats = WalkStats::default();
    let mut frames = Vec::with_capacity(walk.steps);
    for _ in 0..walk.steps {
        yaw = wrap_yaw(yaw + small.sample(&mut rng));
        if rng.random::<f64>() < walk.big_rotation_prob {
            yaw = wrap_yaw(yaw + rng.random_range(-walk.big_rotation_deg..walk.big_rotation_deg));
            stats.random_big_rotations += 1;
        }
        pitch = clamp_pitch(pitch + pitch_noise.sample(&mut rng));
        match try_move(world, x, y, foot, yaw, walk.step_length) {
            Move::Walk(nx, ny, f) => (x, y, foot) = (nx, ny, f),
            Move::Jump(nx, ny, f) => {
                (x, y, foot) = (nx, ny, f);
                stats.jumps += 1;
            }
            Move::Blocked => {
                stats.blocked += 1;
                let turn = rng.random_range(walk.big_rotation_deg..180.0);
                yaw = wrap_yaw(if rng.random::<bool>() { yaw + turn } else { yaw - turn });
            }
        }
        stats.steps += 1;
        let pose = CameraPose::new(x, y, foot as f64 + walk.eye_height, yaw, pitch);
        let image = render_frame(world, &pose, cfg)?.quantized();
        frames.push(Frame { image, pose });
    }
    Ok(Episode { frames, world_seed: world.seed, walk_seed: seed, valid: false, stats, normalization: None })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidityThresholds {
    /// Minimum over frame pairs of the largest horizontal distance, in blocks.
    pub min_displacement: f64,
    /// Minimum per-pixel variance across frames, averaged over pixels.
    pub min_pixel_variance: f64,
    /// Maximum horizontal distance of any frame from the episode centroid, in
    /// blocks. The default keeps normalized positions inside the [-1, 1]
    /// square that the pose grid covers.
    pub max_radius: f64,
}

impl Default for ValidityThresholds {
    fn default() -> Self {
        Self { min_displacement: 8.0, min_pixel_variance: 1e-3, max_radius: 1.0 / DEFAULT_SCALE_XY }
    }
}

pub fn max_pairwise_displacement(poses: &[CameraPose]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in poses.iter().enumerate() {
        for b in &poses[i + 1..] {
            best = best.max(((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt());
        }
    }
    best
}

pub fn mean_pixel_variance(frames: &[Frame]) -> f64 {
    if frames.is_empty() {
        return 0.0;
    }
    let n = frames.len() as f64;
    let len = frames[0].image.data.len();
    let mut total = 0.0;
    for k in 0..len {
        let mean = frames.iter().map(|f| f.image.data[k] as f64).sum::<f64>() / n;
        total += frames.iter().map(|f| (f.image.data[k] as f64 - mean).powi(2)).sum::<f64>() / n;
    }
    total / len as f64
}

fn centroid(poses: &[CameraPose]) -> [f64; 3] {
    let n = poses.len().max(1) as f64;
    let mut c = [0.0; 3];
    for p in poses {
        c[0] += p.x;
        c[1] += p.y;
        c[2] += p.z;
    }
    c.map(|v| v / n)
}

/// Pruning rule on a raw (world-unit) episode.
pub fn episode_valid(episode: &Episode, th: &ValidityThresholds) -> bool {
    if episode.frames.len() != FRAMES_PER_EPISODE {
        return false;
    }
    let poses = episode.poses();
    let c = centroid(&poses);
    let radius = poses.iter().map(|p| ((p.x - c[0]).powi(2) + (p.y - c[1]).powi(2)).sqrt()).fold(0.0, f64::max);
    max_pairwise_displacement(&poses) >= th.min_displacement
        && radius <= th.max_radius
        && mean_pixel_variance(&episode.frames) >= th.min_pixel_variance
}

/// Pruning keeps frames within `1 / DEFAULT_SCALE_XY` blocks of the
/// centroid, so every valid episode lands in the [-1, 1] pose grid.
pub const DEFAULT_SCALE_XY: f64 = 1.0 / 40.0;
pub const DEFAULT_SCALE_Z: f64 = 1.0 / 10.0;

/// Centers positions on the episode centroid and applies fixed global
/// scales; angles are untouched. Already-normalized episodes are returned as is.
pub fn normalize_episode_poses(episode: &Episode, scale_xy: f64, scale_z: f64) -> Episode {
    if episode.normalization.is_some() {
        return episode.clone();
    }
    let norm = PoseNormalization { center: centroid(&episode.poses()), scale_xy, scale_z };
    let mut out = episode.clone();
    for f in &mut out.frames {
        f.pose = norm.apply(&f.pose);
    }
    out.normalization = Some(norm);
    out
}

pub fn denormalize_episode_poses(episode: &Episode) -> Episode {
    let Some(norm) = episode.normalization else {
        return episode.clone();
    };
    let mut out = episode.clone();
    for f in &mut out.frames {
        f.pose = norm.invert(&f.pose);
    }
    out.normalization = None;
    out
}
