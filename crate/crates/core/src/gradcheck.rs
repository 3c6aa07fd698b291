//! End-to-end finite-difference checks of both training losses in 64-bit
//! mode, on the tiny profile.

use gqnloc_nn::gradcheck::{param_derivative, probe_indices, relative_error};
use gqnloc_nn::graph::ReluPattern;
use gqnloc_nn::{Graph, ParamGrads, ParamStore};
use gqnloc_world::{CameraPose, Frame, Image, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::data::{targets, ContextBatch};
use crate::discriminative::{nll_loss_pose, DiscriminativeModel};
use crate::generative::{elbo_terms, layer_noise, GenerativeModel, RolloutOptions};
use crate::pose::pose_tensor;

/// Tolerance both loss checks are held to.
pub const LOSS_TOL: f64 = 1e-5;
const H: f64 = 1e-3;
const FLOOR: f64 = 1e-5;
const PROBES_PER_PARAM: usize = 3;

/// Random frames with poses inside the normalized ranges.
pub fn random_frames(n: usize, size: usize, seed: u64) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut image = Image::new(size);
            for v in image.data.iter_mut() {
                *v = rng.random_range(0.0..1.0);
            }
            let pose = CameraPose::new(
                rng.random_range(-0.9..0.9),
                rng.random_range(-0.9..0.9),
                rng.random_range(-0.5..0.5),
                rng.random_range(-180.0..180.0),
                rng.random_range(-15.0..25.0),
            );
            Frame { image, pose }
        })
        .collect()
}

pub fn random_task(context: usize, size: usize, seed: u64) -> Task {
    let mut f = random_frames(context + 1, size, seed);
    let target = f.pop().expect("at least one frame");
    Task { context: f, target, context_indices: (0..context).collect(), target_index: context }
}

/// Builds the loss on the given graph; returns its value, the gradients when
/// asked for, and the graph's ReLU pattern.
type LossFn<'a> = dyn Fn(Graph<'_, f64>, bool) -> (f64, Option<ParamGrads<f64>>, ReluPattern) + 'a;

/// Worst relative error over a few entries of every parameter tensor. The
/// numeric side replays the ReLU pattern of the unperturbed point, so the
/// stencil differentiates one smooth branch instead of straddling kinks.
fn worst_error(store: &ParamStore<f64>, loss: &LossFn) -> (f64, String) {
    let (_, grads, pattern) = loss(Graph::new(store).record_relu_pattern(), true);
    let grads = grads.expect("gradients requested");
    let mut s = store.clone();
    let mut worst = (0.0, String::new());
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).numel();
        let analytic = grads.get(id).map(|t| t.to_f64_vec()).unwrap_or_else(|| vec![0.0; n]);
        for i in probe_indices(n, PROBES_PER_PARAM) {
            let num = param_derivative(&mut s, id, i, H, &mut |p| loss(Graph::new(p).replay_relu_pattern(pattern.clone()), false).0);
            let e = relative_error(analytic[i], num, FLOOR);
            if !(e <= worst.0) {
                worst = (e, format!("{}[{i}] analytic {:e} numeric {:e}", store.name(id), analytic[i], num));
            }
        }
    }
    worst
}

/// Moves away from the zero-bias initialization to a generic point.
fn jitter(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
}

fn tasks(cfg: &ModelConfig) -> Vec<Task> {
    (0..2).map(|k| random_task(3, cfg.image_size, 40 + k)).collect()
}

/// Worst relative error of the negative ELBO (two DRAW layers, 8x8 images)
/// and where it occurred.
pub fn elbo_check(attention: bool) -> (f64, String) {
    let cfg = ModelConfig::tiny(attention);
    let mut model = GenerativeModel::<f64>::new(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).expect("tiny config is valid");
    jitter(&mut model.store, 15);
    let tasks = tasks(&cfg);
    let refs: Vec<&Task> = tasks.iter().collect();
    let ctx = ContextBatch::<f64>::from_tasks(&refs, &cfg);
    let (x, poses) = targets::<f64>(&refs);
    let noise = layer_noise::<f64>(&cfg, 2, 77, false);
    let loss = |mut g: Graph<'_, f64>, grad: bool| {
        let enc = model.net.encode_context(&mut g, &ctx).expect("encode");
        let q = g.constant(pose_tensor(poses.iter()));
        let xt = g.constant(x.clone());
        let t = elbo_terms(&model.net, &mut g, &enc, q, xt, &noise, 0.7, RolloutOptions::train()).expect("elbo");
        let l = g.sum_all(t.loss).expect("sum");
        let grads = grad.then(|| g.backward(l).params);
        (g.scalar(l), grads, g.take_relu_pattern())
    };
    worst_error(&model.store, &loss)
}

/// Worst relative error of the pose negative log-likelihood (two attention
/// layers for the attention variant).
pub fn pose_nll_check(attention: bool) -> (f64, String) {
    let cfg = ModelConfig::tiny(attention);
    let mut model = DiscriminativeModel::<f64>::new(&cfg, &mut ChaCha8Rng::seed_from_u64(6)).expect("tiny config is valid");
    jitter(&mut model.store, 16);
    let tasks = tasks(&cfg);
    let refs: Vec<&Task> = tasks.iter().collect();
    let ctx = ContextBatch::<f64>::from_tasks(&refs, &cfg);
    let (x, poses) = targets::<f64>(&refs);
    let loss = |mut g: Graph<'_, f64>, grad: bool| {
        let xt = g.constant(x.clone());
        let maps = model.net.forward(&mut g, xt, &ctx).expect("forward");
        let nll = nll_loss_pose(&mut g, &maps, &poses).expect("nll");
        let l = g.sum_all(nll).expect("sum");
        let grads = grad.then(|| g.backward(l).params);
        (g.scalar(l), grads, g.take_relu_pattern())
    };
    worst_error(&model.store, &loss)
}
