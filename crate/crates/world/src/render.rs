//! Per-pixel DDA voxel raycasting with flat Lambertian shading, linear
//! distance fog and a vertical sky gradient.

use crate::error::{Result, WorldError};
use crate::noise::{hash3, unit};
use crate::pose::CameraPose;
use crate::world::{Block, VoxelWorld};

#[derive(Clone, Debug, PartialEq)]
pub struct RenderConfig {
    pub resolution: usize,
    pub vfov_deg: f64,
    pub max_distance: f64,
    pub fog_start: f64,
    pub fog_end: f64,
    pub light_dir: [f64; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        let l: [f64; 3] = [0.4, 0.25, 0.88];
        let n = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
        Self {
            resolution: 32,
            vfov_deg: 70.0,
            max_distance: 96.0,
            fog_start: 40.0,
            fog_end: 96.0,
            light_dir: [l[0] / n, l[1] / n, l[2] / n],
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 {
            return Err(WorldError::InvalidRender(format!("resolution {} < 8", self.resolution)));
        }
        if !(self.fog_start < self.fog_end && self.fog_end <= self.max_distance) {
            return Err(WorldError::InvalidRender(format!(
                "need fog_start < fog_end <= max_distance, got {} / {} / {}",
                self.fog_start, self.fog_end, self.max_distance
            )));
        }
        if !(self.vfov_deg > 0.0 && self.vfov_deg < 180.0) {
            return Err(WorldError::InvalidRender(format!("vertical fov {}", self.vfov_deg)));
        }
        Ok(())
    }

    /// Normalized device coordinates of a pixel center scaled by the half-fov
    /// tangent; row 0 is the top of the image.
    pub fn pixel_offsets(&self, row: usize, col: usize) -> (f64, f64) {
        let t = (self.vfov_deg.to_radians() / 2.0).tan();
        let n = self.resolution as f64;
        let sx = (2.0 * (col as f64 + 0.5) / n - 1.0) * t;
        let sy = (1.0 - 2.0 * (row as f64 + 0.5) / n) * t;
        (sx, sy)
    }

    pub fn ray_direction(&self, pose: &CameraPose, row: usize, col: usize) -> [f64; 3] {
        let (sx, sy) = self.pixel_offsets(row, col);
        let (f, r, u) = (pose.forward(), pose.right(), pose.up());
        let d = [0, 1, 2].map(|i| f[i] + sx * r[i] + sy * u[i]);
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        d.map(|v| v / n)
    }
}

/// Square RGB image, row-major HWC, intensities in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub size: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(size: usize) -> Self {
        Self { size, data: vec![0.0; size * size * 3] }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.size + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_bytes(size: usize, bytes: &[u8]) -> Self {
        Self { size, data: bytes.iter().map(|&b| b as f32 / 255.0).collect() }
    }

    /// The image as it reads back after 8-bit storage.
    pub fn quantized(&self) -> Self {
        Self::from_bytes(self.size, &self.to_bytes())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub block: Block,
    pub voxel: [i32; 3],
    /// Outward normal of the face the ray entered through; zero when the ray
    /// starts inside the voxel.
    pub normal: [i32; 3],
    pub distance: f64,
}

/// Walks voxels along the ray until an opaque block or `max_distance`.
pub fn cast_ray(world: &VoxelWorld, origin: [f64; 3], dir: [f64; 3], max_distance: f64) -> Option<Hit> {
    let mut voxel = origin.map(|v| v.floor() as i32);
    let mut normal = [0i32; 3];
    let mut t_max = [0.0f64; 3];
    let mut t_delta = [0.0f64; 3];
    let mut step = [0i32; 3];
    for a in 0..3 {
        if dir[a] > 0.0 {
            step[a] = 1;
            t_delta[a] = 1.0 / dir[a];
            t_max[a] = (voxel[a] as f64 + 1.0 - origin[a]) / dir[a];
        } else if dir[a] < 0.0 {
            step[a] = -1;
            t_delta[a] = -1.0 / dir[a];
            t_max[a] = (voxel[a] as f64 - origin[a]) / dir[a];
        } else {
            t_delta[a] = f64::INFINITY;
            t_max[a] = f64::INFINITY;
        }
    }
    let mut t = 0.0;
    let top = world.depth as i32;
    loop {
        let b = world.block(voxel[0], voxel[1], voxel[2]);
        if b.is_opaque() {
            return Some(Hit { block: b, voxel, normal, distance: t });
        }
        if voxel[2] >= top && dir[2] >= 0.0 {
            return None;
        }
        let a = if t_max[0] < t_max[1] {
            if t_max[0] < t_max[2] { 0 } else { 2 }
        } else if t_max[1] < t_max[2] {
            1
        } else {
            2
        };
        t = t_max[a];
        if t > max_distance {
            return None;
        }
        voxel[a] += step[a];
        t_max[a] += t_delta[a];
        normal = [0; 3];
        normal[a] = -step[a];
    }
}

pub fn sky_color(world: &VoxelWorld, dir: [f64; 3]) -> [f64; 3] {
    let t = dir[2].clamp(0.0, 1.0).sqrt();
    [0, 1, 2].map(|i| world.sky_horizon[i] * (1.0 - t) + world.sky_zenith[i] * t)
}

fn shade(world: &VoxelWorld, hit: &Hit, dir: [f64; 3], cfg: &RenderConfig) -> [f64; 3] {
    let base = hit.block.base_color();
    let n = hit.normal.map(|v| v as f64);
    let lambert = (n[0] * cfg.light_dir[0] + n[1] * cfg.light_dir[1] + n[2] * cfg.light_dir[2]).max(0.0);
    let [vx, vy, vz] = hit.voxel;
    // A ray starting inside water or leaves sees a uniform murk.
    let (light, jitter) = if hit.normal == [0; 3] {
        (0.6, 1.0)
    } else {
        (0.45 + 0.55 * lambert, 0.92 + 0.16 * unit(hash3(vz as u64, hit.block as u64, vx as i64, vy as i64)))
    };
    let fog = ((hit.distance - cfg.fog_start) / (cfg.fog_end - cfg.fog_start)).clamp(0.0, 1.0);
    let sky = sky_color(world, [dir[0], dir[1], 0.0]);
    [0, 1, 2].map(|i| {
        let c = (base[i] * light * jitter).min(1.0);
        c * (1.0 - fog) + sky[i] * fog
    })
}

/// Renders the view from `pose` given in world (pre-normalization) units.
pub fn render_frame(world: &VoxelWorld, pose: &CameraPose, cfg: &RenderConfig) -> Result<Image> {
    cfg.validate()?;
    let cam = [pose.x, pose.y, pose.z];
    let cell = cam.map(|v| v.floor() as i32);
    if world.block(cell[0], cell[1], cell[2]).is_solid() {
        return Err(WorldError::CameraEmbedded { x: pose.x, y: pose.y, z: pose.z });
    }
    let n = cfg.resolution;
    let mut img = Image::new(n);
    for row in 0..n {
        for col in 0..n {
            let dir = cfg.ray_direction(pose, row, col);
            let c = match cast_ray(world, cam, dir, cfg.max_distance) {
                Some(hit) => shade(world, &hit, dir, cfg),
                None => sky_color(world, dir),
            };
            let i = (row * n + col) * 3;
            for k in 0..3 {
                img.data[i + k] = c[k].clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(img)
}

/// Boolean per-pixel sky mask (rays that escape), row-major.
pub fn sky_mask(world: &VoxelWorld, pose: &CameraPose, cfg: &RenderConfig) -> Vec<bool> {
    let n = cfg.resolution;
    let cam = [pose.x, pose.y, pose.z];
    (0..n * n)
        .map(|i| cast_ray(world, cam, cfg.ray_direction(pose, i / n, i % n), cfg.max_distance).is_none())
        .collect()
}
