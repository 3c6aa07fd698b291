//! Episode files, split manifests, task sampling and bulk generation.
//!
//! File layout, all integers little-endian u32:
//! `magic[8] version resolution frames_per_episode episode_count pose_dim`,
//! then for every episode and frame: `pose_dim` f32 values
//! (x, y, z, yaw, pitch) followed by `H*W*3` image bytes in row-major HWC order.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{io_err, Result, WorldError};
use crate::noise::splitmix64;
use crate::pose::CameraPose;
use crate::render::{Image, RenderConfig};
use crate::walk::{
    episode_valid, normalize_episode_poses, random_walk_episode, Episode, Frame, ValidityThresholds, WalkConfig,
    WalkStats, FRAMES_PER_EPISODE,
};
use crate::world::{generate_world, WorldParams};

pub const MAGIC: &[u8; 8] = b"GQNLEPIS";
pub const FORMAT_VERSION: u32 = 1;
pub const POSE_DIM: usize = 5;
const HEADER_LEN: usize = 8 + 5 * 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub resolution: usize,
    pub frames_per_episode: usize,
    pub episode_count: usize,
    pub pose_dim: usize,
}

impl DatasetHeader {
    fn frame_bytes(&self) -> usize {
        self.pose_dim * 4 + self.resolution * self.resolution * 3
    }

    pub fn file_len(&self) -> u64 {
        HEADER_LEN as u64 + (self.episode_count * self.frames_per_episode * self.frame_bytes()) as u64
    }
}

pub fn encode_dataset(episodes: &[Episode]) -> Result<Vec<u8>> {
    let resolution = episodes.first().map_or(0, |e| e.resolution());
    for e in episodes {
        if e.frames.len() != FRAMES_PER_EPISODE {
            return Err(WorldError::FrameCount { expected: FRAMES_PER_EPISODE, found: e.frames.len() });
        }
        for f in &e.frames {
            if f.image.size != resolution {
                return Err(WorldError::ResolutionMismatch { expected: resolution, found: f.image.size });
            }
        }
    }
    let header = DatasetHeader {
        version: FORMAT_VERSION,
        resolution,
        frames_per_episode: FRAMES_PER_EPISODE,
        episode_count: episodes.len(),
        pose_dim: POSE_DIM,
    };
    let mut buf = Vec::with_capacity(header.file_len() as usize);
    buf.extend_from_slice(MAGIC);
    for v in [FORMAT_VERSION, resolution as u32, FRAMES_PER_EPISODE as u32, episodes.len() as u32, POSE_DIM as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for e in episodes {
        for f in &e.frames {
            for v in f.pose.to_array() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
            buf.extend_from_slice(&f.image.to_bytes());
        }
    }
    Ok(buf)
}

pub fn write_dataset(episodes: &[Episode], path: &Path) -> Result<()> {
    let buf = encode_dataset(episodes)?;
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&buf).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn u32_at(buf: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(buf[off..off + 4].try_into().expect("4 bytes"))
}

pub fn decode_header(buf: &[u8], path: &Path) -> Result<DatasetHeader> {
    if buf.len() < HEADER_LEN {
        if buf.len() >= 8 && &buf[..8] != MAGIC {
            return Err(WorldError::BadMagic { path: path.into() });
        }
        return Err(WorldError::Truncated { path: path.into(), expected: HEADER_LEN as u64, found: buf.len() as u64 });
    }
    if &buf[..8] != MAGIC {
        return Err(WorldError::BadMagic { path: path.into() });
    }
    let version = u32_at(buf, 8);
    if version != FORMAT_VERSION {
        return Err(WorldError::VersionMismatch { path: path.into(), found: version, expected: FORMAT_VERSION });
    }
    let h = DatasetHeader {
        version,
        resolution: u32_at(buf, 12) as usize,
        frames_per_episode: u32_at(buf, 16) as usize,
        episode_count: u32_at(buf, 20) as usize,
        pose_dim: u32_at(buf, 24) as usize,
    };
    if h.pose_dim != POSE_DIM {
        return Err(WorldError::Manifest(format!("{}: pose dimension {} unsupported", path.display(), h.pose_dim)));
    }
    if h.frames_per_episode != FRAMES_PER_EPISODE {
        return Err(WorldError::FrameCount { expected: FRAMES_PER_EPISODE, found: h.frames_per_episode });
    }
    Ok(h)
}

/// Parses an episode file held in memory. Seeds are not part of the format
/// and come back as zero; see [`SplitManifest::assign_seeds`].
pub fn decode_dataset(buf: &[u8], path: &Path) -> Result<Vec<Episode>> {
    let h = decode_header(buf, path)?;
    let expected = h.file_len();
    let found = buf.len() as u64;
    if found < expected {
        return Err(WorldError::Truncated { path: path.into(), expected, found });
    }
    if found > expected {
        return Err(WorldError::TrailingBytes { path: path.into(), found: found - expected });
    }
    let img_len = h.resolution * h.resolution * 3;
    let mut off = HEADER_LEN;
    let mut episodes = Vec::with_capacity(h.episode_count);
    for _ in 0..h.episode_count {
        let mut frames = Vec::with_capacity(h.frames_per_episode);
        for _ in 0..h.frames_per_episode {
            let mut pose = [0.0f64; POSE_DIM];
            for p in &mut pose {
                *p = f32::from_le_bytes(buf[off..off + 4].try_into().expect("4 bytes")) as f64;
                off += 4;
            }
            let image = Image::from_bytes(h.resolution, &buf[off..off + img_len]);
            off += img_len;
            frames.push(Frame { image, pose: CameraPose::from_array(pose) });
        }
        episodes.push(Episode {
            frames,
            world_seed: 0,
            walk_seed: 0,
            valid: true,
            stats: WalkStats::default(),
            normalization: None,
        });
    }
    Ok(episodes)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Episode>> {
    let mut buf = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(io_err(path))?;
    decode_dataset(&buf, path)
}

/// Like [`read_dataset`] but rejects files of another resolution.
pub fn read_dataset_expecting(path: &Path, resolution: usize) -> Result<Vec<Episode>> {
    let episodes = read_dataset(path)?;
    if let Some(e) = episodes.first() {
        if e.resolution() != resolution {
            return Err(WorldError::ResolutionMismatch { expected: resolution, found: e.resolution() });
        }
    }
    Ok(episodes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub context: Vec<Frame>,
    pub target: Frame,
    pub context_indices: Vec<usize>,
    pub target_index: usize,
}

/// Draws `context_size + 1` distinct frames uniformly without replacement;
/// the last one drawn is the target.
pub fn sample_task(episode: &Episode, context_size: usize, seed: u64) -> Result<Task> {
    let n = episode.frames.len();
    if context_size + 1 > n {
        return Err(WorldError::InvalidTask(format!("context size {context_size} needs more than {n} frames")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    let (drawn, _) = idx.partial_shuffle(&mut rng, context_size + 1);
    let target_index = drawn[context_size];
    let context_indices = drawn[..context_size].to_vec();
    Ok(Task {
        context: context_indices.iter().map(|&i| episode.frames[i].clone()).collect(),
        target: episode.frames[target_index].clone(),
        context_indices,
        target_index,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Test,
}

impl SplitKind {
    fn label(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitEntry {
    pub split: SplitKind,
    pub world_seed: u64,
    pub walk_seed: u64,
}

/// Plain-text split membership: one `<train|test> <world_seed> <walk_seed>`
/// line per episode, in file order within each split.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitManifest {
    pub entries: Vec<SplitEntry>,
}

impl SplitManifest {
    /// Builds the manifest, failing if a world seed appears in both splits.
    pub fn new(train: &[Episode], test: &[Episode]) -> Result<Self> {
        let mut entries = Vec::new();
        for (split, eps) in [(SplitKind::Train, train), (SplitKind::Test, test)] {
            for e in eps {
                entries.push(SplitEntry { split, world_seed: e.world_seed, walk_seed: e.walk_seed });
            }
        }
        let m = Self { entries };
        m.check_disjoint()?;
        Ok(m)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let train: std::collections::HashSet<u64> =
            self.entries.iter().filter(|e| e.split == SplitKind::Train).map(|e| e.world_seed).collect();
        match self.entries.iter().find(|e| e.split == SplitKind::Test && train.contains(&e.world_seed)) {
            Some(e) => Err(WorldError::SplitOverlap(e.world_seed)),
            None => Ok(()),
        }
    }

    pub fn seeds(&self, split: SplitKind) -> Vec<(u64, u64)> {
        self.entries.iter().filter(|e| e.split == split).map(|e| (e.world_seed, e.walk_seed)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# split world_seed walk_seed\n");
        for e in &self.entries {
            s.push_str(&format!("{} {} {}\n", e.split.label(), e.world_seed, e.walk_seed));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || WorldError::Manifest(format!("line {}: expected `<train|test> <world_seed> <walk_seed>`", no + 1));
            let mut parts = line.split_whitespace();
            let split = match parts.next() {
                Some("train") => SplitKind::Train,
                Some("test") => SplitKind::Test,
                _ => return Err(bad()),
            };
            let world_seed = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let walk_seed = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if parts.next().is_some() {
                return Err(bad());
            }
            entries.push(SplitEntry { split, world_seed, walk_seed });
        }
        let m = Self { entries };
        m.check_disjoint()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// Copies recorded seeds onto episodes read back from the split's file.
    pub fn assign_seeds(&self, split: SplitKind, episodes: &mut [Episode]) -> Result<()> {
        let seeds = self.seeds(split);
        if seeds.len() != episodes.len() {
            return Err(WorldError::Manifest(format!(
                "{} split lists {} episodes but the file holds {}",
                split.label(),
                seeds.len(),
                episodes.len()
            )));
        }
        for (e, (w, k)) in episodes.iter_mut().zip(seeds) {
            e.world_seed = w;
            e.walk_seed = k;
        }
        Ok(())
    }
}

pub const TRAIN_FILE: &str = "train.gqnep";
pub const TEST_FILE: &str = "test.gqnep";
pub const SPLIT_FILE: &str = "split.txt";

#[derive(Clone, Debug)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub test: PathBuf,
    pub manifest: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self { train: dir.join(TRAIN_FILE), test: dir.join(TEST_FILE), manifest: dir.join(SPLIT_FILE) }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Episode>,
    pub test: Vec<Episode>,
    pub manifest: SplitManifest,
}

impl Dataset {
    pub fn new(train: Vec<Episode>, test: Vec<Episode>) -> Result<Self> {
        let manifest = SplitManifest::new(&train, &test)?;
        Ok(Self { train, test, manifest })
    }

    pub fn save(&self, dir: &Path) -> Result<DatasetPaths> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let p = DatasetPaths::in_dir(dir);
        write_dataset(&self.train, &p.train)?;
        write_dataset(&self.test, &p.test)?;
        self.manifest.write(&p.manifest)?;
        Ok(p)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = DatasetPaths::in_dir(dir);
        let manifest = SplitManifest::read(&p.manifest)?;
        let mut train = read_dataset(&p.train)?;
        let mut test = read_dataset(&p.test)?;
        manifest.assign_seeds(SplitKind::Train, &mut train)?;
        manifest.assign_seeds(SplitKind::Test, &mut test)?;
        Ok(Self { train, test, manifest })
    }
}

#[derive(Clone, Debug)]
pub struct GenerationPlan {
    pub seed: u64,
    pub episodes: usize,
    pub world: WorldParams,
    pub walk: WalkConfig,
    pub render: RenderConfig,
    pub thresholds: ValidityThresholds,
    pub scale_xy: f64,
    pub scale_z: f64,
    /// Give up after this many candidate walks per requested episode.
    pub attempts_per_episode: usize,
}

impl GenerationPlan {
    pub fn new(seed: u64, episodes: usize) -> Self {
        Self {
            seed,
            episodes,
            world: WorldParams::default(),
            walk: WalkConfig::default(),
            render: RenderConfig::default(),
            thresholds: ValidityThresholds::default(),
            scale_xy: crate::walk::DEFAULT_SCALE_XY,
            scale_z: crate::walk::DEFAULT_SCALE_Z,
            attempts_per_episode: 8,
        }
    }

    /// World and walk seeds of candidate `k`.
    pub fn candidate_seeds(&self, k: usize) -> (u64, u64) {
        let w = splitmix64(self.seed.wrapping_mul(0x1000_0000_01B3) ^ (k as u64));
        (w, splitmix64(w ^ 0xC0FF_EE00))
    }

    /// A validated, normalized episode for candidate `k`, or `None` if pruned
    /// or the world was unspawnable.
    pub fn candidate(&self, k: usize) -> Result<Option<Episode>> {
        let (ws, ks) = self.candidate_seeds(k);
        let world = match generate_world(ws, &self.world) {
            Ok(w) => w,
            Err(WorldError::Unspawnable { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut ep = random_walk_episode(&world, ks, &self.walk, &self.render)?;
        if !episode_valid(&ep, &self.thresholds) {
            return Ok(None);
        }
        ep.valid = true;
        Ok(Some(normalize_episode_poses(&ep, self.scale_xy, self.scale_z)))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GenerationReport {
    pub attempts: usize,
    pub pruned: usize,
}

/// Generates candidates in fixed-size rounds and keeps valid ones in
/// candidate order, so the result does not depend on thread count.
pub fn generate_episodes(plan: &GenerationPlan, parallel: bool) -> Result<(Vec<Episode>, GenerationReport)> {
    let budget = plan.episodes * plan.attempts_per_episode.max(1);
    let mut out = Vec::with_capacity(plan.episodes);
    let mut next = 0usize;
    while out.len() < plan.episodes {
        if next >= budget {
            return Err(WorldError::QuotaUnreachable { wanted: plan.episodes, valid: out.len(), attempts: next });
        }
        let round = (plan.episodes - out.len()).max(4).min(budget - next);
        let ks: Vec<usize> = (next..next + round).collect();
        let results: Vec<Result<Option<Episode>>> = map_candidates(plan, &ks, parallel);
        for r in results {
            next += 1;
            if let Some(ep) = r? {
                if out.len() < plan.episodes {
                    out.push(ep);
                }
            }
        }
    }
    let report = GenerationReport { attempts: next, pruned: next - out.len() };
    Ok((out, report))
}

#[cfg(feature = "parallel")]
fn map_candidates(plan: &GenerationPlan, ks: &[usize], parallel: bool) -> Vec<Result<Option<Episode>>> {
    use rayon::prelude::*;
    if parallel {
        ks.par_iter().map(|&k| plan.candidate(k)).collect()
    } else {
        ks.iter().map(|&k| plan.candidate(k)).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn map_candidates(plan: &GenerationPlan, ks: &[usize], _parallel: bool) -> Vec<Result<Option<Episode>>> {
    ks.iter().map(|&k| plan.candidate(k)).collect()
}
