//! Finite-difference gradient oracle.
//!
//! Only evaluates the forward function, so it stays independent of every
//! backward rule it is used to verify.

use crate::graph::{Graph, Var};
use crate::layers::ConvLstmCell;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Fourth-order central difference of `f` w.r.t. element `i` of a parameter.
pub fn param_derivative(store: &mut ParamStore<f64>, id: ParamId, i: usize, h: f64, f: &mut impl FnMut(&ParamStore<f64>) -> f64) -> f64 {
    let orig = store.get(id).data()[i];
    let mut at = |s: &mut ParamStore<f64>, v: f64| {
        s.get_mut(id).data_mut()[i] = v;
        f(s)
    };
    let f2p = at(store, orig + 2.0 * h);
    let f1p = at(store, orig + h);
    let f1m = at(store, orig - h);
    let f2m = at(store, orig - 2.0 * h);
    store.get_mut(id).data_mut()[i] = orig;
    (-f2p + 8.0 * f1p - 8.0 * f1m + f2m) / (12.0 * h)
}

/// Same stencil for an input tensor.
pub fn input_derivative(x: &mut Tensor<f64>, i: usize, h: f64, f: &mut impl FnMut(&Tensor<f64>) -> f64) -> f64 {
    let orig = x.data()[i];
    let mut at = |x: &mut Tensor<f64>, v: f64| {
        x.data_mut()[i] = v;
        f(x)
    };
    let f2p = at(x, orig + 2.0 * h);
    let f1p = at(x, orig + h);
    let f1m = at(x, orig - h);
    let f2m = at(x, orig - 2.0 * h);
    x.data_mut()[i] = orig;
    (-f2p + 8.0 * f1p - 8.0 * f1m + f2m) / (12.0 * h)
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Deterministic spread of `count` indices over `0..n` (all of them when `n <= count`).
pub fn probe_indices(n: usize, count: usize) -> Vec<usize> {
    if n <= count {
        return (0..n).collect();
    }
    let mut v: Vec<usize> = (0..count).map(|j| (j * n) / count + (j * 7919) % (n / count).max(1)).collect();
    v.dedup();
    v
}

/// Tolerance the primitive suite is held to.
pub const PRIMITIVE_TOL: f64 = 1e-6;
const H: f64 = 1e-3;
const FLOOR: f64 = 1e-5;

/// Random tensor with entries bounded away from zero, so ReLU kinks are
/// never straddled by the stencil.
pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

/// Scalar probe `sum(out * r)` with a fixed random `r`.
fn project(g: &mut Graph<'_, f64>, out: Var) -> Var {
    let shape = g.shape(out).to_vec();
    let r = g.constant(rand_tensor(&shape, 999));
    let p = g.mul(out, r).expect("same shape");
    g.sum_all(p).expect("reduction")
}

/// Worst relative error of the gradients of `build` w.r.t. every input.
pub fn input_check(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Var) -> f64 {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars);
    let loss = project(&mut g, out);
    let grads = g.backward(loss);
    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.input(vars[k]).map(|t| t.to_f64_vec()).unwrap_or_else(|| vec![0.0; t.numel()]);
        let mut x = t.clone();
        for i in probe_indices(t.numel(), 64) {
            let mut f = |xi: &Tensor<f64>| {
                let mut g = Graph::new(&store);
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, tj)| g.constant(if j == k { xi.clone() } else { tj.clone() }))
                    .collect();
                let out = build(&mut g, &vs);
                let l = project(&mut g, out);
                g.scalar(l)
            };
            let num = input_derivative(&mut x, i, H, &mut f);
            worst = worst.max(relative_error(analytic[i], num, FLOOR));
        }
    }
    worst
}

/// Two chained ConvLSTM steps sharing one weight set, checked w.r.t. the
/// shared parameters.
fn conv_lstm_check() -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let cell = ConvLstmCell::new(&mut store, "lstm", 2, 3, 3, &mut rng);
    let x = rand_tensor(&[2, 2, 4, 4], 33);
    let inj = rand_tensor(&[2, 12], 34);
    let run = |s: &ParamStore<f64>| {
        let mut g = Graph::new(s);
        let xv = g.constant(x.clone());
        let iv = g.constant(inj.clone());
        let st = cell.zero_state(&mut g, 2, 4, 4);
        let st = cell.step(&mut g, xv, st, Some(iv)).expect("step");
        let st = cell.step(&mut g, xv, st, Some(iv)).expect("step");
        let both = g.concat(&[st.hidden, st.cell], 1).expect("concat");
        let loss = project(&mut g, both);
        (g.scalar(loss), g.backward(loss))
    };
    let (_, grads) = run(&store);
    let mut worst = 0.0f64;
    for id in [cell.gates.weight, cell.gates.bias] {
        let analytic = grads.param(id).expect("used").to_f64_vec();
        for i in probe_indices(analytic.len(), 48) {
            let num = param_derivative(&mut store, id, i, H, &mut |s| run(s).0);
            worst = worst.max(relative_error(analytic[i], num, FLOOR));
        }
    }
    worst
}

/// Worst relative error of every differentiable primitive, by name.
pub fn primitive_suite() -> Vec<(String, f64)> {
    use crate::stochastic::{gaussian_sample, kl_diag_gaussian, standard_normal};
    let mut out: Vec<(String, f64)> = Vec::new();
    let mut push = |name: &str, e: f64| out.push((name.to_string(), e));
    for &(k, s, p) in &[(3, 1, 1), (2, 2, 0), (1, 1, 0), (5, 1, 2), (3, 2, 1)] {
        let e = input_check(vec![rand_tensor(&[2, 3, 6, 6], 1), rand_tensor(&[4, 3, k, k], 2), rand_tensor(&[4], 3)], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), s, p).expect("conv2d")
        });
        push(&format!("conv2d k{k} s{s} p{p}"), e);
    }
    for &(k, s, p) in &[(4, 2, 1), (2, 2, 0), (3, 1, 1)] {
        let e = input_check(vec![rand_tensor(&[2, 3, 4, 4], 4), rand_tensor(&[3, 2, k, k], 5), rand_tensor(&[2], 6)], |g, v| {
            g.conv_transpose2d(v[0], v[1], Some(v[2]), s, p).expect("conv_transpose2d")
        });
        push(&format!("conv_transpose2d k{k} s{s} p{p}"), e);
    }
    push(
        "linear",
        input_check(vec![rand_tensor(&[3, 5], 7), rand_tensor(&[4, 5], 8), rand_tensor(&[4], 9)], |g, v| {
            g.linear(v[0], v[1], Some(v[2])).expect("linear")
        }),
    );
    let ab = || vec![rand_tensor(&[2, 3, 2, 2], 10), rand_tensor(&[2, 3, 2, 2], 11)];
    push("add", input_check(ab(), |g, v| g.add(v[0], v[1]).expect("op")));
    push("sub", input_check(ab(), |g, v| g.sub(v[0], v[1]).expect("op")));
    push("mul", input_check(ab(), |g, v| g.mul(v[0], v[1]).expect("op")));
    push("sigmoid", input_check(ab(), |g, v| g.sigmoid(v[0]).expect("op")));
    push("tanh", input_check(ab(), |g, v| g.tanh(v[0]).expect("op")));
    push("relu", input_check(ab(), |g, v| g.relu(v[0]).expect("op")));
    push("exp", input_check(ab(), |g, v| g.exp(v[0]).expect("op")));
    push(
        "scale and add_scalar",
        input_check(ab(), |g, v| {
            let s = g.scale(v[0], -1.7).expect("op");
            g.add_scalar(s, 0.3).expect("op")
        }),
    );
    push(
        "add_broadcast",
        input_check(vec![rand_tensor(&[2, 3, 2, 2], 12), rand_tensor(&[2, 3], 13)], |g, v| {
            g.add_broadcast(v[0], v[1]).expect("op")
        }),
    );
    let x = || vec![rand_tensor(&[4, 3, 2, 2], 14)];
    push("spatial_mean", input_check(x(), |g, v| g.spatial_mean(v[0]).expect("op")));
    push("sum_rows", input_check(x(), |g, v| g.sum_rows(v[0]).expect("op")));
    push("mean_all", input_check(x(), |g, v| g.mean_all(v[0]).expect("op")));
    push("sum_groups", input_check(x(), |g, v| g.sum_groups(v[0], 2).expect("op")));
    push("slice", input_check(x(), |g, v| g.slice(v[0], 1, 1, 2).expect("op")));
    push("reshape", input_check(x(), |g, v| g.reshape(v[0], &[4, 12]).expect("op")));
    push("repeat_batch", input_check(vec![rand_tensor(&[1, 3, 2], 15)], |g, v| g.repeat_batch(v[0], 3).expect("op")));
    push(
        "broadcast_spatial",
        input_check(vec![rand_tensor(&[2, 3], 16)], |g, v| g.broadcast_spatial(v[0], 3, 2).expect("op")),
    );
    push(
        "concat",
        input_check(vec![rand_tensor(&[2, 3, 2, 2], 17), rand_tensor(&[2, 1, 2, 2], 18)], |g, v| {
            g.concat(&[v[0], v[1]], 1).expect("op")
        }),
    );
    push("pick", input_check(vec![rand_tensor(&[3, 5], 19)], |g, v| g.pick(v[0], &[4, 0, 2]).expect("op")));
    push(
        "gather",
        input_check(vec![rand_tensor(&[2, 6], 20)], |g, v| g.gather(v[0], vec![5, 1, 1, 7, 0, 11], &[2, 3]).expect("op")),
    );
    push("softmax", input_check(vec![rand_tensor(&[3, 7], 21)], |g, v| g.softmax(v[0]).expect("op")));
    push("log_softmax", input_check(vec![rand_tensor(&[3, 7], 22)], |g, v| g.log_softmax(v[0]).expect("op")));
    for &(ta, tb) in &[(false, false), (true, false), (false, true), (true, true)] {
        let a = if ta { [2, 4, 3] } else { [2, 3, 4] };
        let b = if tb { [2, 5, 4] } else { [2, 4, 5] };
        let e = input_check(vec![rand_tensor(&a, 23), rand_tensor(&b, 24)], |g, v| g.bmm(v[0], v[1], ta, tb).expect("op"));
        push(&format!("bmm ta={ta} tb={tb}"), e);
    }
    push(
        "bmm broadcast",
        input_check(vec![rand_tensor(&[3, 1, 4], 25), rand_tensor(&[1, 6, 4], 26)], |g, v| {
            g.bmm(v[0], v[1], false, true).expect("op")
        }),
    );
    let eps = standard_normal::<f64>(&[2, 5], 3);
    push(
        "gaussian_sample",
        input_check(vec![rand_tensor(&[2, 5], 27), rand_tensor(&[2, 5], 28)], move |g, v| {
            gaussian_sample(g, v[0], v[1], eps.clone()).expect("op")
        }),
    );
    push(
        "kl_diag_gaussian",
        input_check(
            vec![rand_tensor(&[2, 5], 29), rand_tensor(&[2, 5], 30), rand_tensor(&[2, 5], 31), rand_tensor(&[2, 5], 32)],
            |g, v| kl_diag_gaussian(g, v[0], v[1], v[2], v[3]).expect("op"),
        ),
    );
    push("conv_lstm shared weights", conv_lstm_check());
    out
}
