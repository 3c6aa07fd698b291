//! Context encoders and the patch-dictionary attention shared by both model
//! directions.

use gqnloc_nn::{Conv2dLayer, Graph, ParamStore, Real, Tensor, Var};
use rand::Rng;

use crate::config::{ModelConfig, KEY_CHANNELS, POSE_ENC, REPR_CHANNELS};
use crate::data::ContextBatch;
use crate::error::{CoreError, Result};

fn conv_stack<T: Real>(g: &mut Graph<'_, T>, layers: &[Conv2dLayer], mut x: Var) -> Result<Var> {
    for (i, l) in layers.iter().enumerate() {
        x = l.forward(g, x)?;
        if i + 1 < layers.len() {
            x = g.relu(x)?;
        }
    }
    Ok(x)
}

/// Six-layer per-image encoder with the pose injected after layer three;
/// per-image outputs are summed into the scene representation.
#[derive(Clone, Debug)]
pub struct RepresentationNet {
    pub front: [Conv2dLayer; 3],
    pub back: [Conv2dLayer; 3],
}

impl RepresentationNet {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, rng: &mut R) -> Self {
        let c = |s: &mut ParamStore<T>, i, cin, cout, k, st, p, r: &mut R| {
            Conv2dLayer::new(s, &format!("{name}.{i}"), cin, cout, k, st, p, r)
        };
        let front = [
            c(store, 0, 3, 32, 2, 2, 0, rng),
            c(store, 1, 32, 32, 3, 1, 1, rng),
            c(store, 2, 32, 64, 2, 2, 0, rng),
        ];
        let back = [
            c(store, 3, 64 + POSE_ENC, 32, 3, 1, 1, rng),
            c(store, 4, 32, 32, 3, 1, 1, rng),
            c(store, 5, 32, REPR_CHANNELS, 3, 1, 1, rng),
        ];
        Self { front, back }
    }

    /// Per-image encodings `[n, 64, s/4, s/4]`.
    pub fn encode<T: Real>(&self, g: &mut Graph<'_, T>, images: Var, poses: Var) -> Result<Var> {
        let h = conv_stack(g, &self.front, images)?;
        let h = g.relu(h)?;
        let s = g.shape(h).to_vec();
        let p = g.broadcast_spatial(poses, s[2], s[3])?;
        let h = g.concat(&[h, p], 1)?;
        conv_stack(g, &self.back, h)
    }

    /// Scene representation `[tasks, 64, s/4, s/4]`.
    pub fn represent<T: Real>(&self, g: &mut Graph<'_, T>, ctx: &ContextBatch<T>) -> Result<Var> {
        if ctx.per_task == 0 {
            return Err(CoreError::EmptyContext("the parametric representation needs context images"));
        }
        let images = g.constant(ctx.images.clone());
        let poses = g.constant(ctx.poses.clone());
        let per_image = self.encode(g, images, poses)?;
        Ok(g.sum_groups(per_image, ctx.per_task)?)
    }
}

/// Image-only encoder whose output pixels key the patch dictionary.
#[derive(Clone, Debug)]
pub struct KeyNet {
    pub layers: [Conv2dLayer; 6],
}

impl KeyNet {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, rng: &mut R) -> Self {
        let n = |i| format!("{name}.{i}");
        let layers = [
            Conv2dLayer::new(store, &n(0), 3, 32, 2, 2, 0, rng),
            Conv2dLayer::new(store, &n(1), 32, 32, 3, 1, 1, rng),
            Conv2dLayer::new(store, &n(2), 32, 64, 2, 2, 0, rng),
            Conv2dLayer::new(store, &n(3), 64, 32, 1, 1, 0, rng),
            Conv2dLayer::new(store, &n(4), 32, 32, 1, 1, 0, rng),
            Conv2dLayer::new(store, &n(5), 32, KEY_CHANNELS, 1, 1, 0, rng),
        ];
        Self { layers }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, images: Var) -> Result<Var> {
        conv_stack(g, &self.layers, images)
    }
}

/// Attention memory on the graph: `keys [b, m, 64]`, `values [b, m, 265]`,
/// where a batch of one is shared by every query.
#[derive(Clone, Copy, Debug)]
pub struct PatchDictionary {
    pub keys: Var,
    pub values: Var,
    pub entries: usize,
}

pub fn build_patch_dictionary<T: Real>(
    g: &mut Graph<'_, T>,
    key_net: &KeyNet,
    ctx: &ContextBatch<T>,
    cfg: &ModelConfig,
) -> Result<PatchDictionary> {
    if ctx.per_task == 0 {
        return Err(CoreError::EmptyContext("the patch dictionary needs context images"));
    }
    let images = g.constant(ctx.images.clone());
    let map = key_net.forward(g, images)?;
    let s = g.shape(map).to_vec();
    let (n, c, gh, gw) = (s[0], s[1], s[2], s[3]);
    let ps = cfg.patches_per_side();
    // Top-left aligned ps x ps sub-grid, entry-major.
    let mut idx = Vec::with_capacity(n * ps * ps * c);
    for img in 0..n {
        for i in 0..ps {
            for j in 0..ps {
                for ch in 0..c {
                    idx.push(((img * c + ch) * gh + i) * gw + j);
                }
            }
        }
    }
    let entries = ctx.per_task * ps * ps;
    let keys = g.gather(map, idx, &[ctx.tasks, entries, c])?;
    let raw = g.constant(ctx.patch_values.clone());
    let values = g.concat(&[raw, keys], 2)?;
    Ok(PatchDictionary { keys, values, entries })
}

/// Query key from a recurrent state: two 1x1 convolutions then a spatial mean.
#[derive(Clone, Debug)]
pub struct QueryNet {
    pub a: Conv2dLayer,
    pub b: Conv2dLayer,
}

impl QueryNet {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, cin: usize, rng: &mut R) -> Self {
        Self {
            a: Conv2dLayer::new(store, &format!("{name}.0"), cin, KEY_CHANNELS, 1, 1, 0, rng),
            b: Conv2dLayer::new(store, &format!("{name}.1"), KEY_CHANNELS, KEY_CHANNELS, 1, 1, 0, rng),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, state: Var) -> Result<Var> {
        let h = self.a.forward(g, state)?;
        let h = g.relu(h)?;
        let h = self.b.forward(g, h)?;
        Ok(g.spatial_mean(h)?)
    }
}

/// Soft attention read: `(attended [b, 265], weights [b, m])`.
pub fn attend<T: Real>(g: &mut Graph<'_, T>, query: Var, dict: &PatchDictionary) -> Result<(Var, Var)> {
    if dict.entries == 0 {
        return Err(CoreError::EmptyContext("attention over an empty dictionary"));
    }
    let qs = g.shape(query).to_vec();
    let q = g.reshape(query, &[qs[0], 1, qs[1]])?;
    let scores = g.bmm(q, dict.keys, false, true)?;
    let weights = g.softmax(scores)?;
    let read = g.bmm(weights, dict.values, false, false)?;
    let vdim = g.shape(read)[2];
    let read = g.reshape(read, &[qs[0], vdim])?;
    let weights = g.reshape(weights, &[qs[0], dict.entries])?;
    Ok((read, weights))
}

/// Dictionary from explicit tensors, for tests and visualization.
pub fn dictionary_from_tensors<T: Real>(g: &mut Graph<'_, T>, keys: Tensor<T>, values: Tensor<T>) -> PatchDictionary {
    let entries = keys.shape()[1];
    let keys = g.constant(keys);
    let values = g.constant(values);
    PatchDictionary { keys, values, entries }
}
