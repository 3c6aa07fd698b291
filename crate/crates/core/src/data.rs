//! Conversion of frames and tasks into network inputs.

use gqnloc_nn::{Real, Tensor};
use gqnloc_world::{CameraPose, Frame, Image, Task};

use crate::config::{ModelConfig, PATCH, PATCH_STRIDE};
use crate::pose::encode_pose;

/// `[n, 3, s, s]` from HWC images.
pub fn image_tensor<'a, T: Real>(images: impl IntoIterator<Item = &'a Image>) -> Tensor<T> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut size = 0;
    for img in images {
        size = img.size;
        let plane = size * size;
        let base = data.len();
        data.resize(base + 3 * plane, T::ZERO);
        for (p, px) in img.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[base + c * plane + p] = T::from_f64(px[c] as f64);
            }
        }
        n += 1;
    }
    Tensor::from_vec(&[n, 3, size, size], data).expect("image tensor")
}

/// Context frames of a batch of tasks, flattened task-major.
#[derive(Clone, Debug)]
pub struct ContextBatch<T> {
    pub images: Tensor<T>,
    pub poses: Tensor<T>,
    /// Frames per task.
    pub per_task: usize,
    /// Raw patch entries without the learned key, `[tasks, frames * patches, 201]`.
    pub patch_values: Tensor<T>,
    pub tasks: usize,
}

impl<T: Real> ContextBatch<T> {
    pub fn new(contexts: &[&[Frame]], cfg: &ModelConfig) -> Self {
        let per_task = contexts.first().map_or(0, |c| c.len());
        assert!(contexts.iter().all(|c| c.len() == per_task), "tasks in a batch share the context size");
        let frames: Vec<&Frame> = contexts.iter().flat_map(|c| c.iter()).collect();
        let images = image_tensor(frames.iter().map(|f| &f.image));
        let poses = crate::pose::pose_tensor(frames.iter().map(|f| &f.pose));
        let patch_values = patch_entries(&frames, cfg, contexts.len());
        Self { images, poses, per_task, patch_values, tasks: contexts.len() }
    }

    pub fn from_tasks(tasks: &[&Task], cfg: &ModelConfig) -> Self {
        let ctx: Vec<&[Frame]> = tasks.iter().map(|t| t.context.as_slice()).collect();
        Self::new(&ctx, cfg)
    }
}

/// Center of patch `i` along one image axis, normalized to [-1, 1].
pub fn patch_center(i: usize, size: usize) -> f64 {
    (PATCH_STRIDE * i) as f64 * 2.0 / size as f64 + PATCH as f64 / size as f64 - 1.0
}

fn patch_entries<T: Real>(frames: &[&Frame], cfg: &ModelConfig, tasks: usize) -> Tensor<T> {
    let ps = cfg.patches_per_side();
    let width = PATCH * PATCH * 3 + 7 + 2;
    let mut data = Vec::with_capacity(frames.len() * ps * ps * width);
    for f in frames {
        let s = f.image.size;
        let enc = encode_pose(&f.pose);
        for i in 0..ps {
            for j in 0..ps {
                for y in 0..PATCH {
                    for x in 0..PATCH {
                        let px = f.image.pixel(PATCH_STRIDE * i + y, PATCH_STRIDE * j + x);
                        data.extend(px.iter().map(|&v| T::from_f64(v as f64)));
                    }
                }
                data.extend(enc.iter().map(|&v| T::from_f64(v)));
                data.push(T::from_f64(patch_center(j, s)));
                data.push(T::from_f64(patch_center(i, s)));
            }
        }
    }
    let per_task = if tasks == 0 { 0 } else { frames.len() / tasks * ps * ps };
    Tensor::from_vec(&[tasks, per_task, width], data).expect("patch entries")
}

/// Target images and poses of a batch of tasks.
pub fn targets<T: Real>(tasks: &[&Task]) -> (Tensor<T>, Vec<CameraPose>) {
    (image_tensor(tasks.iter().map(|t| &t.target.image)), tasks.iter().map(|t| t.target.pose).collect())
}
