//! Conditional DRAW generator `Pr(X | P, C)` with either a summed scene
//! representation or sequential patch attention as its conditioning.

use gqnloc_nn::stochastic::{gaussian_sample, kl_diag_gaussian, standard_normal};
use gqnloc_nn::{Conv2dLayer, ConvLstmCell, ConvTranspose2dLayer, Graph, LinearLayer, ParamStore, Real, Tensor, Var};
use gqnloc_world::{CameraPose, Image};
use rand::Rng;

use crate::config::{ModelConfig, POSE_ENC, REPR_CHANNELS, VALUE_DIM};
use crate::data::{image_tensor, ContextBatch};
use crate::error::{CoreError, Result};
use crate::nets::{attend, build_patch_dictionary, KeyNet, PatchDictionary, QueryNet, RepresentationNet};
use crate::pose::pose_tensor;

const TARGET_FEATURES: usize = 32;

#[derive(Clone, Debug)]
pub enum GenerativeContext {
    Parametric { repr: RepresentationNet, inject_gen: Conv2dLayer, inject_inf: Conv2dLayer },
    Attention { keys: KeyNet, query: QueryNet, inject_gen: LinearLayer, inject_inf: LinearLayer },
}

#[derive(Clone, Debug)]
pub struct GenerativeNet {
    pub cfg: ModelConfig,
    pub context: GenerativeContext,
    pub down: [Conv2dLayer; 2],
    pub gen: ConvLstmCell,
    pub inf: ConvLstmCell,
    pub prior: Conv2dLayer,
    pub posterior: Conv2dLayer,
    pub canvas: Conv2dLayer,
    pub up: [ConvTranspose2dLayer; 2],
}

/// Context summary on the graph: a representation `[b, 64, g, g]` or a
/// patch dictionary. A batch of one serves every query.
#[derive(Clone, Copy, Debug)]
pub enum ContextEncoding {
    Parametric(Var),
    Attention(PatchDictionary),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Sample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RolloutOptions {
    pub mode: Mode,
    /// Use the prior as the posterior (diagnostic; the KL is then exactly zero).
    pub posterior_is_prior: bool,
}

impl RolloutOptions {
    pub fn train() -> Self {
        Self { mode: Mode::Train, posterior_is_prior: false }
    }

    pub fn sample() -> Self {
        Self { mode: Mode::Sample, posterior_is_prior: false }
    }
}

#[derive(Clone, Debug)]
pub struct Rollout {
    /// Image mean `[b, 3, s, s]`.
    pub mean: Var,
    /// Per-layer KL, each `[b]`; empty in sample mode.
    pub kl_layers: Vec<Var>,
    /// Per-layer attention weights `[b, m]`; empty for the parametric model.
    pub attention: Vec<Var>,
}

/// Standard normal noise for every DRAW layer. With `shared` all batch items
/// see the same draw (common random numbers across candidate poses).
pub fn layer_noise<T: Real>(cfg: &ModelConfig, batch: usize, seed: u64, shared: bool) -> Vec<Tensor<T>> {
    let g = cfg.grid();
    (0..cfg.layers)
        .map(|l| {
            let layer_seed = seed.wrapping_mul(0x9E37_79B9).wrapping_add(l as u64 * 0x5851_F42D);
            if shared {
                standard_normal::<T>(&[1, cfg.latent_channels, g, g], layer_seed).repeat_batch(batch)
            } else {
                let items: Vec<Tensor<T>> = (0..batch)
                    .map(|b| standard_normal(&[1, cfg.latent_channels, g, g], layer_seed ^ ((b as u64 + 1) << 40)))
                    .collect();
                Tensor::concat_batch(&items).expect("noise")
            }
        })
        .collect()
}

impl GenerativeNet {
    pub fn new<T: Real, R: Rng>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.state_channels;
        let zc = cfg.latent_channels;
        let context = if cfg.attention {
            GenerativeContext::Attention {
                keys: KeyNet::new(store, "gen.keys", rng),
                query: QueryNet::new(store, "gen.query", c, rng),
                inject_gen: LinearLayer::new(store, "gen.inject_gen", VALUE_DIM + POSE_ENC, 4 * c, rng),
                inject_inf: LinearLayer::new(store, "gen.inject_inf", VALUE_DIM + POSE_ENC, 4 * c, rng),
            }
        } else {
            GenerativeContext::Parametric {
                repr: RepresentationNet::new(store, "gen.repr", rng),
                inject_gen: Conv2dLayer::new(store, "gen.inject_gen", REPR_CHANNELS + POSE_ENC, 4 * c, 1, 1, 0, rng),
                inject_inf: Conv2dLayer::new(store, "gen.inject_inf", REPR_CHANNELS + POSE_ENC, 4 * c, 1, 1, 0, rng),
            }
        };
        Ok(Self {
            cfg: cfg.clone(),
            context,
            down: [
                Conv2dLayer::new(store, "gen.down.0", 3, TARGET_FEATURES, 2, 2, 0, rng),
                Conv2dLayer::new(store, "gen.down.1", TARGET_FEATURES, TARGET_FEATURES, 2, 2, 0, rng),
            ],
            gen: ConvLstmCell::new(store, "gen.lstm", zc, c, cfg.lstm_kernel, rng),
            inf: ConvLstmCell::new(store, "gen.inference", TARGET_FEATURES + c, c, cfg.lstm_kernel, rng),
            prior: Conv2dLayer::same(store, "gen.prior", c, 2 * zc, 5, rng),
            posterior: Conv2dLayer::same(store, "gen.posterior", c, 2 * zc, 5, rng),
            canvas: Conv2dLayer::new(store, "gen.canvas", c, cfg.canvas_channels, 1, 1, 0, rng),
            up: [
                ConvTranspose2dLayer::new(store, "gen.up.0", cfg.canvas_channels, 32, 4, 2, 1, rng),
                ConvTranspose2dLayer::new(store, "gen.up.1", 32, 3, 4, 2, 1, rng),
            ],
        })
    }

    pub fn encode_context<T: Real>(&self, g: &mut Graph<'_, T>, ctx: &ContextBatch<T>) -> Result<ContextEncoding> {
        match &self.context {
            GenerativeContext::Parametric { repr, .. } => Ok(ContextEncoding::Parametric(repr.represent(g, ctx)?)),
            GenerativeContext::Attention { keys, .. } => {
                Ok(ContextEncoding::Attention(build_patch_dictionary(g, keys, ctx, &self.cfg)?))
            }
        }
    }

    fn split_gaussian<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<(Var, Var)> {
        let zc = self.cfg.latent_channels;
        Ok((g.slice(x, 1, 0, zc)?, g.slice(x, 1, zc, zc)?))
    }

    /// Downsampled target features `[b, 32, g, g]`.
    pub fn target_features<T: Real>(&self, g: &mut Graph<'_, T>, target: Var) -> Result<Var> {
        let h = self.down[0].forward(g, target)?;
        let h = g.relu(h)?;
        Ok(self.down[1].forward(g, h)?)
    }

    /// Runs the L recurrent layers with shared weights. `query` is `[b, 7]`;
    /// `target_features` is required in train mode.
    pub fn rollout<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        enc: &ContextEncoding,
        query: Var,
        target_features: Option<Var>,
        noise: &[Tensor<T>],
        opts: RolloutOptions,
    ) -> Result<Rollout> {
        let b = g.shape(query)[0];
        let gs = self.cfg.grid();
        if opts.mode == Mode::Train && target_features.is_none() {
            return Err(CoreError::MissingTarget);
        }
        if noise.len() != self.cfg.layers {
            return Err(CoreError::Config(format!("{} noise tensors for {} layers", noise.len(), self.cfg.layers)));
        }
        let fixed_injection = match (&self.context, enc) {
            (GenerativeContext::Parametric { inject_gen, inject_inf, .. }, ContextEncoding::Parametric(r)) => {
                let r = if g.shape(*r)[0] == b { *r } else { g.repeat_batch(*r, b)? };
                let p = g.broadcast_spatial(query, gs, gs)?;
                let cond = g.concat(&[r, p], 1)?;
                Some((inject_gen.forward(g, cond)?, inject_inf.forward(g, cond)?))
            }
            (GenerativeContext::Attention { .. }, ContextEncoding::Attention(_)) => None,
            _ => return Err(CoreError::Config("context encoding does not match the model variant".into())),
        };
        let mut gen = self.gen.zero_state(g, b, gs, gs);
        let mut inf = self.inf.zero_state(g, b, gs, gs);
        let mut canvas = g.constant(Tensor::zeros(&[b, self.cfg.canvas_channels, gs, gs]));
        let mut kl_layers = Vec::new();
        let mut attention = Vec::new();
        for eps in noise.iter().take(self.cfg.layers) {
            let (inj_gen, inj_inf) = match (fixed_injection, &self.context, enc) {
                (Some(pair), _, _) => pair,
                (None, GenerativeContext::Attention { query: qn, inject_gen, inject_inf, .. }, ContextEncoding::Attention(dict)) => {
                    let q = qn.forward(g, gen.hidden)?;
                    let (read, w) = attend(g, q, dict)?;
                    attention.push(w);
                    let cond = g.concat(&[read, query], 1)?;
                    (inject_gen.forward(g, cond)?, inject_inf.forward(g, cond)?)
                }
                _ => unreachable!("variant checked above"),
            };
            let prior = self.prior.forward(g, gen.hidden)?;
            let (mp, lp) = self.split_gaussian(g, prior)?;
            let z = match opts.mode {
                Mode::Sample => gaussian_sample(g, mp, lp, eps.clone())?,
                Mode::Train => {
                    let tf = target_features.expect("checked above");
                    let x = g.concat(&[tf, gen.hidden], 1)?;
                    inf = self.inf.step(g, x, inf, Some(inj_inf))?;
                    let (mq, lq) = if opts.posterior_is_prior {
                        (mp, lp)
                    } else {
                        let post = self.posterior.forward(g, inf.hidden)?;
                        self.split_gaussian(g, post)?
                    };
                    kl_layers.push(kl_diag_gaussian(g, mq, lq, mp, lp)?);
                    gaussian_sample(g, mq, lq, eps.clone())?
                }
            };
            gen = self.gen.step(g, z, gen, Some(inj_gen))?;
            let delta = self.canvas.forward(g, gen.hidden)?;
            canvas = g.add(canvas, delta)?;
        }
        let h = self.up[0].forward(g, canvas)?;
        let h = g.relu(h)?;
        let h = self.up[1].forward(g, h)?;
        let mean = g.sigmoid(h)?;
        Ok(Rollout { mean, kl_layers, attention })
    }
}

/// Per-item Gaussian negative log-likelihood of `target` under `N(mean, sigma^2)`,
/// summed over pixels: `[b]`.
pub fn gaussian_nll<T: Real>(g: &mut Graph<'_, T>, target: Var, mean: Var, sigma: f64) -> Result<Var> {
    let pixels: usize = g.shape(target)[1..].iter().product();
    let d = g.sub(target, mean)?;
    let sq = g.mul(d, d)?;
    let quad = g.sum_rows(sq)?;
    let quad = g.scale(quad, 1.0 / (2.0 * sigma * sigma))?;
    let norm = pixels as f64 * (sigma.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln());
    Ok(g.add_scalar(quad, norm)?)
}

#[derive(Clone, Debug)]
pub struct ElboTerms {
    /// Per-item negative ELBO `[b]`.
    pub loss: Var,
    pub nll: Var,
    pub kl_total: Var,
    pub rollout: Rollout,
}

/// Negative ELBO per item.
#[allow(clippy::too_many_arguments)]
pub fn elbo_terms<T: Real>(
    net: &GenerativeNet,
    g: &mut Graph<'_, T>,
    enc: &ContextEncoding,
    query: Var,
    target: Var,
    noise: &[Tensor<T>],
    sigma: f64,
    opts: RolloutOptions,
) -> Result<ElboTerms> {
    let tf = net.target_features(g, target)?;
    let rollout = net.rollout(g, enc, query, Some(tf), noise, opts)?;
    let nll = gaussian_nll(g, target, rollout.mean, sigma)?;
    let mut kl_total = rollout.kl_layers[0];
    for &k in &rollout.kl_layers[1..] {
        kl_total = g.add(kl_total, k)?;
    }
    let loss = g.add(nll, kl_total)?;
    Ok(ElboTerms { loss, nll, kl_total, rollout })
}

/// A generative network together with its parameters.
#[derive(Clone, Debug)]
pub struct GenerativeModel<T: Real> {
    pub net: GenerativeNet,
    pub store: ParamStore<T>,
    /// Set once parameters come from training rather than initialization.
    pub trained: bool,
}

impl<T: Real> GenerativeModel<T> {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = GenerativeNet::new(cfg, &mut store, rng)?;
        Ok(Self { net, store, trained: false })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.cfg
    }

    /// Image means rendered at `poses` for a single context.
    pub fn sample(&self, ctx: &ContextBatch<T>, poses: &[CameraPose], seed: u64) -> Result<Vec<Image>> {
        Ok(self.sample_with_attention(ctx, poses, seed)?.0)
    }

    /// Like `sample`, also returning per-layer attention weights as
    /// `[layer][pose][entry]` (empty for the parametric variant).
    pub fn sample_with_attention(
        &self,
        ctx: &ContextBatch<T>,
        poses: &[CameraPose],
        seed: u64,
    ) -> Result<(Vec<Image>, Vec<Vec<Vec<f64>>>)> {
        let mut g = Graph::new(&self.store);
        let enc = self.net.encode_context(&mut g, ctx)?;
        let q = g.constant(pose_tensor(poses.iter()));
        let noise = layer_noise(&self.net.cfg, poses.len(), seed, false);
        let r = self.net.rollout(&mut g, &enc, q, None, &noise, RolloutOptions::sample())?;
        let att = r
            .attention
            .iter()
            .map(|&w| {
                let v = g.value(w).to_f64_vec();
                let n = v.len() / poses.len().max(1);
                v.chunks(n.max(1)).map(|c| c.to_vec()).collect()
            })
            .collect();
        Ok((tensor_to_images(g.value(r.mean)), att))
    }

    /// ELBO scores (negated loss, averaged over `k` common-noise draws) of
    /// one target image at every candidate pose, higher is better.
    #[allow(clippy::too_many_arguments)]
    pub fn score_poses(
        &self,
        target: &Image,
        ctx: &ContextBatch<T>,
        candidates: &[CameraPose],
        sigma: f64,
        k: usize,
        seed: u64,
        chunk: usize,
        mode: gqnloc_nn::Parallelism,
    ) -> Result<Vec<f64>> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let frozen = self.frozen_context(ctx)?;
        let target_t: Tensor<T> = image_tensor(std::iter::once(target));
        let chunk = chunk.max(1);
        let n_chunks = candidates.len().div_ceil(chunk);
        let parts: Vec<Result<Vec<f64>>> = gqnloc_nn::par::map_range(mode, n_chunks, |ci| {
            let poses = &candidates[ci * chunk..((ci + 1) * chunk).min(candidates.len())];
            self.score_chunk(&frozen, &target_t, poses, sigma, k, seed)
        });
        let mut out = Vec::with_capacity(candidates.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    fn score_chunk(
        &self,
        frozen: &FrozenContext<T>,
        target: &Tensor<T>,
        poses: &[CameraPose],
        sigma: f64,
        k: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let b = poses.len();
        let mut acc = vec![0.0; b];
        let mut g = Graph::new(&self.store).with_parallelism(gqnloc_nn::Parallelism::Sequential);
        let enc = frozen.constant(&mut g);
        let q = g.constant(pose_tensor(poses.iter()));
        let x1 = g.constant(target.clone());
        let x = g.repeat_batch(x1, b)?;
        let tf1 = self.net.target_features(&mut g, x1)?;
        let tf = g.repeat_batch(tf1, b)?;
        for s in 0..k.max(1) {
            let noise = layer_noise(&self.net.cfg, b, seed.wrapping_add(s as u64 * 7_777), true);
            let r = self.net.rollout(&mut g, &enc, q, Some(tf), &noise, RolloutOptions::train())?;
            let nll = gaussian_nll(&mut g, x, r.mean, sigma)?;
            let mut loss = nll;
            for &kl in &r.kl_layers {
                loss = g.add(loss, kl)?;
            }
            for (a, v) in acc.iter_mut().zip(g.value(loss).data()) {
                *a -= v.to_f64();
            }
        }
        Ok(acc.into_iter().map(|v| v / k.max(1) as f64).collect())
    }

    /// Context encoding evaluated once, so that many query batches can reuse it.
    pub fn frozen_context(&self, ctx: &ContextBatch<T>) -> Result<FrozenContext<T>> {
        let mut g = Graph::new(&self.store);
        Ok(match self.net.encode_context(&mut g, ctx)? {
            ContextEncoding::Parametric(r) => FrozenContext::Parametric(g.value(r).clone()),
            ContextEncoding::Attention(d) => FrozenContext::Attention {
                keys: g.value(d.keys).clone(),
                values: g.value(d.values).clone(),
            },
        })
    }
}

#[derive(Clone, Debug)]
pub enum FrozenContext<T> {
    Parametric(Tensor<T>),
    Attention { keys: Tensor<T>, values: Tensor<T> },
}

impl<T: Real> FrozenContext<T> {
    pub fn constant(&self, g: &mut Graph<'_, T>) -> ContextEncoding {
        match self {
            FrozenContext::Parametric(r) => ContextEncoding::Parametric(g.constant(r.clone())),
            FrozenContext::Attention { keys, values } => {
                ContextEncoding::Attention(crate::nets::dictionary_from_tensors(g, keys.clone(), values.clone()))
            }
        }
    }
}

/// `[n, 3, s, s]` tensor back to HWC images, clamped to [0, 1].
pub fn tensor_to_images<T: Real>(t: &Tensor<T>) -> Vec<Image> {
    let s = t.shape();
    let (n, size) = (s[0], s[2]);
    let plane = size * size;
    (0..n)
        .map(|i| {
            let mut img = Image::new(size);
            for p in 0..plane {
                for c in 0..3 {
                    img.data[p * 3 + c] = t.data()[(i * 3 + c) * plane + p].to_f64().clamp(0.0, 1.0) as f32;
                }
            }
            img
        })
        .collect()
}
