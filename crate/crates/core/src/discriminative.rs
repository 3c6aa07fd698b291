//! Reversed direction `Pr(P | X, C)`: four categorical heads over quantized
//! pose space.

use gqnloc_nn::{Conv2dLayer, ConvLstmCell, Graph, Mlp, ParamStore, Real, Var};
use gqnloc_world::CameraPose;
use rand::Rng;

use crate::bins::{bin_index, Head};
use crate::config::{ModelConfig, REPR_CHANNELS, VALUE_DIM};
use crate::data::{image_tensor, ContextBatch};
use crate::error::Result;
use crate::nets::{attend, build_patch_dictionary, KeyNet, QueryNet, RepresentationNet};

const FEATURES: usize = 64;
const HIDDEN: usize = 64;

#[derive(Clone, Debug)]
pub enum DiscriminativeContext {
    Parametric { repr: RepresentationNet },
    Attention { keys: KeyNet, query: QueryNet, read: Mlp, lstm: ConvLstmCell },
}

#[derive(Clone, Debug)]
pub struct DiscriminativeNet {
    pub cfg: ModelConfig,
    pub trunk: [Conv2dLayer; 5],
    pub context: DiscriminativeContext,
    pub mixer: [Conv2dLayer; 4],
    pub heads: [Mlp; 4],
}

/// Per-head log-probabilities on the graph, each `[b, head size]`.
#[derive(Clone, Debug)]
pub struct PoseMapVars {
    pub heads: [Var; 4],
    pub attention: Vec<Var>,
}

impl PoseMapVars {
    pub fn head(&self, h: Head) -> Var {
        self.heads[h as usize]
    }
}

impl DiscriminativeNet {
    pub fn new<T: Real, R: Rng>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let trunk = [
            Conv2dLayer::new(store, "disc.trunk.0", 3, 32, 3, 2, 1, rng),
            Conv2dLayer::new(store, "disc.trunk.1", 32, 64, 3, 2, 1, rng),
            Conv2dLayer::new(store, "disc.trunk.2", 64, 64, 3, 1, 1, rng),
            Conv2dLayer::new(store, "disc.trunk.3", 64, 64, 1, 1, 0, rng),
            Conv2dLayer::new(store, "disc.trunk.4", 64, FEATURES, 1, 1, 0, rng),
        ];
        let (context, mixer_in) = if cfg.attention {
            (
                DiscriminativeContext::Attention {
                    keys: KeyNet::new(store, "disc.keys", rng),
                    query: QueryNet::new(store, "disc.query", HIDDEN, rng),
                    read: Mlp::new(store, "disc.read", &[VALUE_DIM, 64, 64, 64], rng),
                    lstm: ConvLstmCell::new(store, "disc.lstm", FEATURES + 64, HIDDEN, cfg.lstm_kernel, rng),
                },
                HIDDEN,
            )
        } else {
            (DiscriminativeContext::Parametric { repr: RepresentationNet::new(store, "disc.repr", rng) }, FEATURES + REPR_CHANNELS)
        };
        let mixer = [
            Conv2dLayer::new(store, "disc.mixer.0", mixer_in, 64, 3, 1, 1, rng),
            Conv2dLayer::new(store, "disc.mixer.1", 64, 64, 3, 1, 1, rng),
            Conv2dLayer::new(store, "disc.mixer.2", 64, 64, 3, 1, 1, rng),
            Conv2dLayer::new(store, "disc.mixer.3", 64, 4, 5, 1, 2, rng),
        ];
        let plane = cfg.grid() * cfg.grid();
        let heads = Head::ALL.map(|h| Mlp::new(store, &format!("disc.head.{}", h.name()), &[plane, 256, 128, h.size()], rng));
        Ok(Self { cfg: cfg.clone(), trunk, context, mixer, heads })
    }

    /// `targets [b, 3, s, s]`, context with `b` tasks or one shared task.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, targets: Var, ctx: &ContextBatch<T>) -> Result<PoseMapVars> {
        let b = g.shape(targets)[0];
        let gs = self.cfg.grid();
        let mut h = targets;
        for (i, l) in self.trunk.iter().enumerate() {
            h = l.forward(g, h)?;
            if i + 1 < self.trunk.len() {
                h = g.relu(h)?;
            }
        }
        let feats = h;
        let mut attention = Vec::new();
        let mixed_in = match &self.context {
            DiscriminativeContext::Parametric { repr } => {
                let r = repr.represent(g, ctx)?;
                let r = if g.shape(r)[0] == b { r } else { g.repeat_batch(r, b)? };
                g.concat(&[feats, r], 1)?
            }
            DiscriminativeContext::Attention { keys, query, read, lstm } => {
                let dict = build_patch_dictionary(g, keys, ctx, &self.cfg)?;
                let mut state = lstm.zero_state(g, b, gs, gs);
                for _ in 0..self.cfg.disc_attention_layers {
                    let q = query.forward(g, state.hidden)?;
                    let (att, w) = attend(g, q, &dict)?;
                    attention.push(w);
                    let m = read.forward(g, att)?;
                    let m = g.broadcast_spatial(m, gs, gs)?;
                    let x = g.concat(&[feats, m], 1)?;
                    state = lstm.step(g, x, state, None)?;
                }
                state.hidden
            }
        };
        let mut h = mixed_in;
        for (i, l) in self.mixer.iter().enumerate() {
            h = l.forward(g, h)?;
            if i + 1 < self.mixer.len() {
                h = g.relu(h)?;
            }
        }
        let mut heads = Vec::with_capacity(4);
        for (k, mlp) in self.heads.iter().enumerate() {
            let ch = g.slice(h, 1, k, 1)?;
            let flat = g.reshape(ch, &[b, gs * gs])?;
            let logits = mlp.forward(g, flat)?;
            heads.push(g.log_softmax(logits)?);
        }
        Ok(PoseMapVars { heads: [heads[0], heads[1], heads[2], heads[3]], attention })
    }
}

/// Per-item negative log-likelihood of the ground-truth bins, summed over heads: `[b]`.
pub fn nll_loss_pose<T: Real>(g: &mut Graph<'_, T>, maps: &PoseMapVars, gt: &[CameraPose]) -> Result<Var> {
    let bins: Vec<_> = gt.iter().map(bin_index).collect();
    let mut total: Option<Var> = None;
    for h in Head::ALL {
        let idx: Vec<usize> = bins.iter().map(|b| b.get(h)).collect();
        let lp = g.pick(maps.head(h), &idx)?;
        total = Some(match total {
            None => lp,
            Some(t) => g.add(t, lp)?,
        });
    }
    Ok(g.scale(total.expect("four heads"), -1.0)?)
}

/// Evaluated maps for one item.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseProbMaps {
    pub xy: Vec<f64>,
    pub z: Vec<f64>,
    pub yaw: Vec<f64>,
    pub pitch: Vec<f64>,
}

impl PoseProbMaps {
    pub fn head(&self, h: Head) -> &[f64] {
        match h {
            Head::Xy => &self.xy,
            Head::Z => &self.z,
            Head::Yaw => &self.yaw,
            Head::Pitch => &self.pitch,
        }
    }

    /// Uniform log-probabilities on every head.
    pub fn uniform() -> Self {
        let u = |h: Head| vec![-(h.size() as f64).ln(); h.size()];
        Self { xy: u(Head::Xy), z: u(Head::Z), yaw: u(Head::Yaw), pitch: u(Head::Pitch) }
    }

    /// Negative log-likelihood of `gt` under these maps.
    pub fn nll(&self, gt: &CameraPose) -> f64 {
        let b = bin_index(gt);
        -Head::ALL.iter().map(|&h| self.head(h)[b.get(h)]).sum::<f64>()
    }
}

#[derive(Clone, Debug)]
pub struct DiscriminativeModel<T: Real> {
    pub net: DiscriminativeNet,
    pub store: ParamStore<T>,
    /// Set once parameters come from training rather than initialization.
    pub trained: bool,
}

impl<T: Real> DiscriminativeModel<T> {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = DiscriminativeNet::new(cfg, &mut store, rng)?;
        Ok(Self { net, store, trained: false })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.cfg
    }

    /// Maps for one target image and its context, plus per-layer attention
    /// weights for the attention variant.
    pub fn pose_maps(&self, target: &gqnloc_world::Image, ctx: &ContextBatch<T>) -> Result<(PoseProbMaps, Vec<Vec<f64>>)> {
        let mut g = Graph::new(&self.store);
        let x = g.constant(image_tensor::<T>(std::iter::once(target)));
        let maps = self.net.forward(&mut g, x, ctx)?;
        let get = |h: Head| g.value(maps.head(h)).to_f64_vec();
        let out = PoseProbMaps { xy: get(Head::Xy), z: get(Head::Z), yaw: get(Head::Yaw), pitch: get(Head::Pitch) };
        let att = maps.attention.iter().map(|&w| g.value(w).to_f64_vec()).collect();
        Ok((out, att))
    }
}

/// Sum of per-layer weights, as a flat tensor helper for tests.
pub fn total_attention(weights: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; weights.first().map_or(0, |w| w.len())];
    for w in weights {
        for (a, v) in acc.iter_mut().zip(w) {
            *a += v;
        }
    }
    acc
}

