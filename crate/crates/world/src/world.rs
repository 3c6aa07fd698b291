//! Heightmap voxel worlds: multi-octave terrain, water bodies and trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, WorldError};
use crate::noise::{fbm, splitmix64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Block {
    Air = 0,
    Grass,
    Dirt,
    Stone,
    Sand,
    Water,
    Wood,
    Leaves,
}

impl Block {
    /// Terrain the agent can neither walk through nor stand inside.
    pub fn is_solid(self) -> bool {
        !matches!(self, Block::Air | Block::Water | Block::Leaves)
    }

    /// Anything a camera ray stops at.
    pub fn is_opaque(self) -> bool {
        self != Block::Air
    }

    pub fn base_color(self) -> [f64; 3] {
        match self {
            Block::Air => [0.0, 0.0, 0.0],
            Block::Grass => [0.36, 0.62, 0.24],
            Block::Dirt => [0.47, 0.33, 0.21],
            Block::Stone => [0.52, 0.52, 0.55],
            Block::Sand => [0.87, 0.81, 0.56],
            Block::Water => [0.17, 0.33, 0.78],
            Block::Wood => [0.42, 0.29, 0.15],
            Block::Leaves => [0.16, 0.44, 0.14],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldParams {
    /// Blocks per horizontal side.
    pub extent: usize,
    /// Vertical size of the voxel grid.
    pub depth: usize,
    pub base_height: f64,
    pub height_amplitude: f64,
    /// Lattice spacing of the coarsest terrain octave.
    pub terrain_period: f64,
    pub octaves: u32,
    pub water_level: i32,
    /// Surfaces above this height are bare stone.
    pub stone_line: i32,
    /// Biome noise above this value turns the surface into desert sand.
    pub desert_threshold: f64,
    pub tree_spacing: f64,
    /// Fraction of Poisson-disk candidates kept in the densest forest.
    pub tree_density: f64,
    pub sky_horizon: [f64; 3],
    pub sky_zenith: [f64; 3],
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            extent: 128,
            depth: 64,
            base_height: 14.0,
            height_amplitude: 30.0,
            terrain_period: 48.0,
            octaves: 4,
            water_level: 24,
            stone_line: 36,
            desert_threshold: 0.62,
            tree_spacing: 5.0,
            tree_density: 0.6,
            sky_horizon: [0.78, 0.86, 0.96],
            sky_zenith: [0.34, 0.54, 0.90],
        }
    }
}

impl WorldParams {
    fn validate(&self) -> Result<()> {
        if self.extent < 32 {
            return Err(WorldError::InvalidParams(format!("extent {} < 32", self.extent)));
        }
        if self.depth < 16 || self.depth > 255 {
            return Err(WorldError::InvalidParams(format!("depth {} outside [16, 255]", self.depth)));
        }
        if self.water_level < 0 || self.water_level as usize >= self.depth {
            return Err(WorldError::InvalidParams(format!("water level {} outside the grid", self.water_level)));
        }
        if !(self.terrain_period > 0.0 && self.tree_spacing > 0.0) {
            return Err(WorldError::InvalidParams("periods must be positive".into()));
        }
        Ok(())
    }
}

const TAG_HEIGHT: u64 = 1;
const TAG_RIDGE: u64 = 2;
const TAG_BIOME: u64 = 3;
const TAG_FOREST: u64 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelWorld {
    pub seed: u64,
    pub extent: usize,
    pub depth: usize,
    /// Number of terrain blocks in each column; the surface block sits at `height - 1`.
    pub height_field: Vec<i32>,
    pub water_level: i32,
    pub sky_horizon: [f64; 3],
    pub sky_zenith: [f64; 3],
    blocks: Vec<Block>,
}

impl VoxelWorld {
    /// Level terrain of the given height, no trees. Outside the grid the
    /// world continues as sea at `water_level`, so passing the same value for
    /// both gives an endless plain.
    pub fn flat(extent: usize, depth: usize, height: i32, water_level: i32) -> Self {
        let mut w = Self::empty(0, extent, depth, water_level, &WorldParams::default());
        for y in 0..extent {
            for x in 0..extent {
                w.fill_column(x, y, height, Block::Grass, 99);
            }
        }
        w
    }

    fn empty(seed: u64, extent: usize, depth: usize, water_level: i32, params: &WorldParams) -> Self {
        Self {
            seed,
            extent,
            depth,
            height_field: vec![0; extent * extent],
            water_level,
            sky_horizon: params.sky_horizon,
            sky_zenith: params.sky_zenith,
            blocks: vec![Block::Air; extent * extent * depth],
        }
    }

    fn fill_column(&mut self, x: usize, y: usize, height: i32, surface: Block, stone_line: i32) {
        let height = height.clamp(1, self.depth as i32 - 1);
        self.height_field[y * self.extent + x] = height;
        for z in 0..self.depth as i32 {
            let b = if z < height - 4 {
                Block::Stone
            } else if z < height - 1 {
                if surface == Block::Sand { Block::Sand } else { Block::Dirt }
            } else if z == height - 1 {
                if height > stone_line && surface == Block::Grass { Block::Stone } else { surface }
            } else if z < self.water_level {
                Block::Water
            } else {
                Block::Air
            };
            self.set(x as i32, y as i32, z, b);
        }
    }

    fn idx(&self, x: i32, y: i32, z: i32) -> Option<usize> {
        let (e, d) = (self.extent as i32, self.depth as i32);
        if x < 0 || y < 0 || z < 0 || x >= e || y >= e || z >= d {
            return None;
        }
        Some((z as usize * self.extent + y as usize) * self.extent + x as usize)
    }

    pub fn in_bounds_xy(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.extent && (y as usize) < self.extent
    }

    /// Block at integer voxel coordinates. Bedrock below the grid, open sea
    /// around it, air above.
    pub fn block(&self, x: i32, y: i32, z: i32) -> Block {
        if z < 0 {
            return Block::Stone;
        }
        match self.idx(x, y, z) {
            Some(i) => self.blocks[i],
            None if !self.in_bounds_xy(x, y) && z < self.water_level => Block::Water,
            None => Block::Air,
        }
    }

    pub fn set(&mut self, x: i32, y: i32, z: i32, b: Block) {
        if let Some(i) = self.idx(x, y, z) {
            self.blocks[i] = b;
        }
    }

    pub fn column_height(&self, x: i32, y: i32) -> Option<i32> {
        self.in_bounds_xy(x, y).then(|| self.height_field[y as usize * self.extent + x as usize])
    }

    /// Height the agent stands at in a column: one above the highest solid block.
    pub fn ground(&self, x: i32, y: i32) -> Option<i32> {
        if !self.in_bounds_xy(x, y) {
            return None;
        }
        let top = (0..self.depth as i32).rev().find(|&z| self.block(x, y, z).is_solid());
        Some(top.map_or(0, |z| z + 1))
    }

    pub fn is_dry(&self, x: i32, y: i32) -> bool {
        self.column_height(x, y).is_some_and(|h| h > self.water_level)
    }

    pub fn dry_columns(&self) -> usize {
        self.height_field.iter().filter(|&&h| h > self.water_level).count()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }
}

/// Builds a world as a pure function of the seed and parameters.
pub fn generate_world(seed: u64, params: &WorldParams) -> Result<VoxelWorld> {
    params.validate()?;
    let mut w = VoxelWorld::empty(seed, params.extent, params.depth, params.water_level, params);
    let e = params.extent;
    for y in 0..e {
        for x in 0..e {
            let (fx, fy) = (x as f64, y as f64);
            let base = fbm(seed, TAG_HEIGHT, fx, fy, params.terrain_period, params.octaves);
            // Sharpened ridge channel lifts occasional mountain ranges.
            let ridge = 1.0 - (2.0 * fbm(seed, TAG_RIDGE, fx, fy, params.terrain_period * 1.5, 3) - 1.0).abs();
            let shape = 0.7 * base + 0.3 * ridge.powi(3);
            let h = (params.base_height + params.height_amplitude * shape).floor() as i32;
            let biome = fbm(seed, TAG_BIOME, fx, fy, params.terrain_period * 2.0, 2);
            let surface = if h <= params.water_level + 1 || biome > params.desert_threshold {
                Block::Sand
            } else {
                Block::Grass
            };
            w.fill_column(x, y, h, surface, params.stone_line);
        }
    }
    if w.dry_columns() == 0 {
        return Err(WorldError::Unspawnable { water_level: params.water_level });
    }
    plant_trees(&mut w, params);
    Ok(w)
}

fn plant_trees(w: &mut VoxelWorld, params: &WorldParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(w.seed ^ 0x7EE5));
    let e = params.extent as f64;
    let r2 = params.tree_spacing * params.tree_spacing;
    let candidates = (e * e / r2) as usize * 2;
    let mut placed: Vec<(f64, f64)> = Vec::new();
    for _ in 0..candidates {
        let (x, y) = (rng.random_range(2.0..e - 2.0), rng.random_range(2.0..e - 2.0));
        let trunk: u32 = rng.random_range(3..=5);
        let keep: f64 = rng.random();
        let forest = fbm(w.seed, TAG_FOREST, x, y, params.terrain_period, 2);
        if keep > params.tree_density * (2.0 * forest - 0.6).clamp(0.0, 1.0) {
            continue;
        }
        let (ix, iy) = (x as i32, y as i32);
        if w.block(ix, iy, w.height_field[iy as usize * w.extent + ix as usize] - 1) != Block::Grass {
            continue;
        }
        if placed.iter().any(|&(px, py)| (px - x).powi(2) + (py - y).powi(2) < r2) {
            continue;
        }
        placed.push((x, y));
        let base = w.height_field[iy as usize * w.extent + ix as usize];
        let top = base + trunk as i32;
        if top + 2 >= w.depth as i32 {
            continue;
        }
        for dz in -1..=1i32 {
            let radius = if dz == 1 { 1 } else { 2 };
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    if dx * dx + dy * dy > radius * radius + 1 {
                        continue;
                    }
                    let (lx, ly, lz) = (ix + dx, iy + dy, top + dz);
                    if w.block(lx, ly, lz) == Block::Air {
                        w.set(lx, ly, lz, Block::Leaves);
                    }
                }
            }
        }
        for z in base..top {
            w.set(ix, iy, z, Block::Wood);
        }
    }
}
