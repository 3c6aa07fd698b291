//! Reverse-mode tape over a fixed set of tensor operations.
//!
//! A [`Graph`] records one forward pass. Parameters are read from a shared
//! [`ParamStore`]; each parameter gets a single node per graph, so every use
//! of a shared weight accumulates into the same gradient buffer.

use std::collections::HashMap;

use crate::conv::{self, ConvGeom};
use crate::error::{invalid, mismatch, NnError, Result};
use crate::par::Parallelism;
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::real::{gemm, Real};
use crate::tensor::{dims4, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Input,
    Param(usize),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvT2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast {
        x: Var,
        b: Var,
    },
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var),
    SpatialMean(Var),
    SumRows(Var),
    SumAll(Var),
    MeanAll(Var),
    SumGroups {
        x: Var,
        group: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    BroadcastSpatial(Var),
    RepeatBatch {
        x: Var,
        n: usize,
    },
    Bmm {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Pick {
        x: Var,
        idx: Vec<usize>,
    },
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Output of [`Graph::backward`].
pub struct Gradients<T> {
    pub params: ParamGrads<T>,
    inputs: HashMap<usize, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient w.r.t. a node created with [`Graph::input`].
    pub fn input(&self, v: Var) -> Option<&Tensor<T>> {
        self.inputs.get(&v.0)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id)
    }
}

pub struct Graph<'p, T: Real> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<usize, Var>,
    checked: bool,
    mode: Parallelism,
    pattern: PatternMode,
}

/// Which side of its kink every ReLU element was on, in creation order.
pub type ReluPattern = Vec<Vec<bool>>;

enum PatternMode {
    Off,
    Record(ReluPattern),
    Replay(ReluPattern, usize),
}

/// `[outer, axis, inner]` view of a shape.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            checked: false,
            mode: Parallelism::global(),
            pattern: PatternMode::Off,
        }
    }

    /// Remember the activation pattern of every ReLU built from now on.
    pub fn record_relu_pattern(mut self) -> Self {
        self.pattern = PatternMode::Record(Vec::new());
        self
    }

    /// Force ReLUs onto a recorded pattern, so that the forward pass is the
    /// smooth branch through the recording point. Finite differences of such
    /// a graph never straddle a kink. Only the forward values are meaningful.
    pub fn replay_relu_pattern(mut self, pattern: ReluPattern) -> Self {
        self.pattern = PatternMode::Replay(pattern, 0);
        self
    }

    pub fn take_relu_pattern(&mut self) -> ReluPattern {
        match std::mem::replace(&mut self.pattern, PatternMode::Off) {
            PatternMode::Record(p) | PatternMode::Replay(p, _) => p,
            PatternMode::Off => Vec::new(),
        }
    }

    /// Fail any op that produces NaN or infinity.
    pub fn checked(mut self, on: bool) -> Self {
        self.checked = on;
        self
    }

    pub fn with_parallelism(mut self, mode: Parallelism) -> Self {
        self.mode = mode;
        self
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.get_f64(0)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op, needs_grad: bool) -> Result<Var> {
        if self.checked && !value.all_finite() {
            return Err(NnError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant with no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is reported by [`Gradients::input`].
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Input,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id.0) {
            return v;
        }
        self.nodes.push(Node {
            value: self.store.get(id).clone(),
            op: Op::Param(id.0),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id.0, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] || stride == 0 {
            return Err(mismatch("conv2d", &xs, &ws));
        }
        if xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3] {
            return Err(mismatch("conv2d", &xs, &ws));
        }
        if let Some(b) = b {
            if self.value(b).numel() != ws[0] {
                return Err(mismatch("conv2d bias", &ws, self.shape(b)));
            }
        }
        let g = ConvGeom {
            c: xs[1],
            h: xs[2],
            w: xs[3],
            k: ws[2],
            stride,
            pad,
        };
        let (ho, wo) = g.out_hw();
        let out = conv::conv2d_forward(
            self.mode,
            self.value(x).data(),
            xs[0],
            &g,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            ws[0],
        );
        let needs = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(
            "conv2d",
            Tensor::from_vec(&[xs[0], ws[0], ho, wo], out)?,
            Op::Conv2d { x, w, b, stride, pad },
            needs,
        )
    }

    /// Transposed convolution; `w` is `[cin, cout, k, k]`, output size
    /// `(in - 1) * stride - 2 * pad + k`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[0] || ws[2] != ws[3] || stride == 0 {
            return Err(mismatch("conv_transpose2d", &xs, &ws));
        }
        let k = ws[2];
        let ho = (xs[2] - 1) * stride + k;
        let wo = (xs[3] - 1) * stride + k;
        if ho <= 2 * pad || wo <= 2 * pad {
            return Err(invalid("conv_transpose2d", "padding exceeds output"));
        }
        let g = ConvGeom {
            c: ws[1],
            h: ho - 2 * pad,
            w: wo - 2 * pad,
            k,
            stride,
            pad,
        };
        let out = conv::conv_t2d_forward(
            self.mode,
            self.value(x).data(),
            xs[0],
            xs[1],
            &g,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let needs = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(
            "conv_transpose2d",
            Tensor::from_vec(&[xs[0], ws[1], g.h, g.w], out)?,
            Op::ConvT2d { x, w, b, stride, pad },
            needs,
        )
    }

    /// `x [n, in] * w[out, in]^T + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(mismatch("linear", &xs, &ws));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::ZERO; n * dout];
        if let Some(b) = b {
            let bv = self.value(b).data();
            if bv.len() != dout {
                return Err(mismatch("linear bias", &ws, self.shape(b)));
            }
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bv);
            }
        }
        gemm(
            false,
            true,
            n,
            dout,
            din,
            T::ONE,
            self.value(x).data(),
            self.value(w).data(),
            T::ONE,
            &mut out,
        );
        let needs = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push("linear", Tensor::from_vec(&[n, dout], out)?, Op::Linear { x, w, b }, needs)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_vec(av.shape(), data)?;
        let needs = self.ng(a) || self.ng(b);
        self.push(name, t, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x [n, c, h, w] + b` where `b` is `[n, c]` or `[n, c, 1, 1]`, broadcast spatially.
    pub fn add_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = dims4(self.shape(x));
        let bs = self.shape(b).to_vec();
        if self.shape(x).len() != 4 || bs.len() < 2 || bs[0] != xs[0] || bs[1] != xs[1] || self.value(b).numel() != xs[0] * xs[1] {
            return Err(mismatch("add_broadcast", self.shape(x), &bs));
        }
        let plane = xs[2] * xs[3];
        let mut out = self.value(x).clone();
        let bv = self.value(b).data().to_vec();
        for (i, p) in out.data_mut().chunks_mut(plane).enumerate() {
            for v in p {
                *v += bv[i];
            }
        }
        let needs = self.ng(x) || self.ng(b);
        self.push("add_broadcast", out, Op::AddBroadcast { x, b }, needs)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let sv = T::from_f64(s);
        let t = self.value(x).map(|v| v * sv);
        let needs = self.ng(x);
        self.push("scale", t, Op::Scale(x, s), needs)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let sv = T::from_f64(s);
        let t = self.value(x).map(|v| v + sv);
        let needs = self.ng(x);
        self.push("add_scalar", t, Op::AddScalar(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.sigmoid());
        let needs = self.ng(x);
        self.push("sigmoid", t, Op::Sigmoid(x), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.tanh());
        let needs = self.ng(x);
        self.push("tanh", t, Op::Tanh(x), needs)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = match &mut self.pattern {
            PatternMode::Off => self.nodes[x.0].value.map(|v| if v > T::ZERO { v } else { T::ZERO }),
            PatternMode::Record(p) => {
                let v = &self.nodes[x.0].value;
                p.push(v.data().iter().map(|&e| e > T::ZERO).collect());
                v.map(|v| if v > T::ZERO { v } else { T::ZERO })
            }
            PatternMode::Replay(p, at) => {
                let mask = p.get(*at).ok_or_else(|| NnError::InvalidArgument { op: "relu", msg: "activation pattern exhausted".into() })?;
                *at += 1;
                let v = &self.nodes[x.0].value;
                if mask.len() != v.numel() {
                    return Err(NnError::InvalidArgument { op: "relu", msg: "activation pattern does not match the graph".into() });
                }
                let data = v.data().iter().zip(mask).map(|(&e, &on)| if on { e } else { T::ZERO }).collect();
                Tensor::from_vec(v.shape(), data)?
            }
        };
        let needs = self.ng(x);
        self.push("relu", t, Op::Relu(x), needs)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.exp());
        let needs = self.ng(x);
        self.push("exp", t, Op::Exp(x), needs)
    }

    fn last_axis(&self, x: Var) -> (usize, usize) {
        let s = self.shape(x);
        let k = *s.last().unwrap_or(&1);
        (self.value(x).numel() / k.max(1), k)
    }

    /// Softmax over the last axis, stabilized by max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (_, k) = self.last_axis(x);
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(k) {
            softmax_row(row);
        }
        let needs = self.ng(x);
        self.push("softmax", t, Op::Softmax(x), needs)
    }

    /// `logits - logsumexp(logits)` over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (_, k) = self.last_axis(x);
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(k) {
            log_softmax_row(row);
        }
        let needs = self.ng(x);
        self.push("log_softmax", t, Op::LogSoftmax(x), needs)
    }

    /// Mean over spatial axes: `[n, c, h, w] -> [n, c]`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(invalid("spatial_mean", format!("expected rank 4, got {s:?}")));
        }
        let plane = s[2] * s[3];
        let inv = T::from_f64(1.0 / plane as f64);
        let data = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let needs = self.ng(x);
        self.push("spatial_mean", Tensor::from_vec(&[s[0], s[1]], data)?, Op::SpatialMean(x), needs)
    }

    /// Sum of every element of each batch item: `[n, ...] -> [n]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let n = v.batch();
        let per = v.numel() / n.max(1);
        let data = v.data().chunks(per.max(1)).map(|r| r.iter().copied().sum()).collect();
        let needs = self.ng(x);
        self.push("sum_rows", Tensor::from_vec(&[n], data)?, Op::SumRows(x), needs)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        let needs = self.ng(x);
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(x), needs)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.sum() * T::from_f64(1.0 / v.numel() as f64);
        let needs = self.ng(x);
        self.push("mean_all", Tensor::scalar(s), Op::MeanAll(x), needs)
    }

    /// Sums consecutive groups of `group` batch items: `[n*group, ...] -> [n, ...]`.
    pub fn sum_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let v = self.value(x);
        let b = v.batch();
        if group == 0 || !b.is_multiple_of(group) {
            return Err(invalid("sum_groups", format!("batch {b} not divisible by {group}")));
        }
        let per = v.numel() / b;
        let n = b / group;
        let mut data = vec![T::ZERO; n * per];
        for (i, item) in v.data().chunks(per).enumerate() {
            let dst = &mut data[(i / group) * per..(i / group + 1) * per];
            for (d, &s) in dst.iter_mut().zip(item) {
                *d += s;
            }
        }
        let mut shape = v.shape().to_vec();
        shape[0] = n;
        let needs = self.ng(x);
        self.push("sum_groups", Tensor::from_vec(&shape, data)?, Op::SumGroups { x, group }, needs)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| invalid("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i]) {
                return Err(mismatch("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let len = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let needs = xs.iter().any(|&x| self.ng(x));
        self.push("concat", Tensor::from_vec(&shape, data)?, Op::Concat { xs: xs.to_vec(), axis }, needs)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(invalid("slice", format!("[{start}, {}) on axis {axis} of {s:?}", start + len)));
        }
        let (outer, alen, inner) = split_axis(&s, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * alen + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s.clone();
        shape[axis] = len;
        let needs = self.ng(x);
        self.push("slice", Tensor::from_vec(&shape, data)?, Op::Slice { x, axis, start }, needs)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let needs = self.ng(x);
        self.push("reshape", t, Op::Reshape(x), needs)
    }

    /// `[n, c] -> [n, c, h, w]` by copying each value over the plane.
    pub fn broadcast_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(invalid("broadcast_spatial", format!("expected [n, c], got {s:?}")));
        }
        let mut data = Vec::with_capacity(s[0] * s[1] * h * w);
        for &v in self.value(x).data() {
            data.extend(std::iter::repeat_n(v, h * w));
        }
        let needs = self.ng(x);
        self.push("broadcast_spatial", Tensor::from_vec(&[s[0], s[1], h, w], data)?, Op::BroadcastSpatial(x), needs)
    }

    /// Tiles a tensor `n` times along the batch axis.
    pub fn repeat_batch(&mut self, x: Var, n: usize) -> Result<Var> {
        let t = self.value(x).repeat_batch(n);
        let needs = self.ng(x);
        self.push("repeat_batch", t, Op::RepeatBatch { x, n }, needs)
    }

    /// Batched matmul. `a`: `[ba, m, k]` (`[ba, k, m]` if `ta`), `b`: `[bb, k, n]`
    /// (`[bb, n, k]` if `tb`); a batch of 1 broadcasts.
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 {
            return Err(mismatch("bmm", &sa, &sb));
        }
        let (m, ka) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (kb, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        let batch = sa[0].max(sb[0]);
        if ka != kb || (sa[0] != batch && sa[0] != 1) || (sb[0] != batch && sb[0] != 1) {
            return Err(mismatch("bmm", &sa, &sb));
        }
        let k = ka;
        let mut out = vec![T::ZERO; batch * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            let ai = if sa[0] == 1 { 0 } else { i };
            let bi = if sb[0] == 1 { 0 } else { i };
            gemm(
                ta,
                tb,
                m,
                n,
                k,
                T::ONE,
                &av[ai * m * k..(ai + 1) * m * k],
                &bv[bi * k * n..(bi + 1) * k * n],
                T::ZERO,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let needs = self.ng(a) || self.ng(b);
        self.push("bmm", Tensor::from_vec(&[batch, m, n], out)?, Op::Bmm { a, b, ta, tb }, needs)
    }

    /// `x [n, k] -> [n]`, picking column `idx[i]` of row `i`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || idx.len() != s[0] || idx.iter().any(|&i| i >= s[1]) {
            return Err(invalid("pick", format!("indices {idx:?} for shape {s:?}")));
        }
        let v = self.value(x).data();
        let data = idx.iter().enumerate().map(|(r, &c)| v[r * s[1] + c]).collect();
        let needs = self.ng(x);
        self.push("pick", Tensor::from_vec(&[s[0]], data)?, Op::Pick { x, idx: idx.to_vec() }, needs)
    }

    /// Flat gather: `out[i] = x[idx[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).data();
        if idx.iter().any(|&i| i >= v.len()) {
            return Err(invalid("gather", "index out of range"));
        }
        let data = idx.iter().map(|&i| v[i]).collect();
        let t = Tensor::from_vec(shape, data)?;
        let needs = self.ng(x);
        self.push("gather", t, Op::Gather { x, idx }, needs)
    }

    /// Reverse pass from `loss`, seeded with ones.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::ONE));
        let mut out = Gradients {
            params: ParamGrads::new(self.store.len()),
            inputs: HashMap::new(),
        };
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(i, node, &gy, &mut grads, &mut out);
        }
        out
    }

    fn backward_node(&self, index: usize, node: &Node<T>, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>], out: &mut Gradients<T>) {
        let mut acc = |v: Var, g: Tensor<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(a) => a.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Input => {
                out.inputs.insert(index, gy.clone());
            }
            Op::Param(id) => out.params.accumulate(*id, gy),
            Op::Conv2d { x, w, b, stride, pad } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let xs = xv.shape();
                let ws = wv.shape();
                let g = ConvGeom {
                    c: xs[1],
                    h: xs[2],
                    w: xs[3],
                    k: ws[2],
                    stride: *stride,
                    pad: *pad,
                };
                let mut dx = self.ng(*x).then(|| Tensor::zeros(xs));
                let mut dw = self.ng(*w).then(|| Tensor::zeros(ws));
                let mut db = b.filter(|b| self.ng(*b)).map(|b| Tensor::zeros(self.shape(b)));
                conv::conv2d_backward(
                    self.mode,
                    xv.data(),
                    xs[0],
                    &g,
                    wv.data(),
                    ws[0],
                    gy.data(),
                    dx.as_mut().map(|t| t.data_mut()),
                    dw.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                );
                if let Some(t) = dx {
                    acc(*x, t);
                }
                if let Some(t) = dw {
                    acc(*w, t);
                }
                if let (Some(t), Some(b)) = (db, b) {
                    acc(*b, t);
                }
            }
            Op::ConvT2d { x, w, b, stride, pad } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let xs = xv.shape();
                let ws = wv.shape();
                let g = ConvGeom {
                    c: ws[1],
                    h: y.shape()[2],
                    w: y.shape()[3],
                    k: ws[2],
                    stride: *stride,
                    pad: *pad,
                };
                let mut dx = self.ng(*x).then(|| Tensor::zeros(xs));
                let mut dw = self.ng(*w).then(|| Tensor::zeros(ws));
                let mut db = b.filter(|b| self.ng(*b)).map(|b| Tensor::zeros(self.shape(b)));
                conv::conv_t2d_backward(
                    self.mode,
                    xv.data(),
                    xs[0],
                    xs[1],
                    &g,
                    wv.data(),
                    gy.data(),
                    dx.as_mut().map(|t| t.data_mut()),
                    dw.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                );
                if let Some(t) = dx {
                    acc(*x, t);
                }
                if let Some(t) = dw {
                    acc(*w, t);
                }
                if let (Some(t), Some(b)) = (db, b) {
                    acc(*b, t);
                }
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, din) = (xv.shape()[0], xv.shape()[1]);
                let dout = wv.shape()[0];
                if self.ng(*x) {
                    let mut dx = Tensor::zeros(xv.shape());
                    gemm(false, false, n, din, dout, T::ONE, gy.data(), wv.data(), T::ZERO, dx.data_mut());
                    acc(*x, dx);
                }
                if self.ng(*w) {
                    let mut dw = Tensor::zeros(wv.shape());
                    gemm(true, false, dout, din, n, T::ONE, gy.data(), xv.data(), T::ZERO, dw.data_mut());
                    acc(*w, dw);
                }
                if let Some(b) = b.filter(|b| self.ng(*b)) {
                    let mut db = Tensor::zeros(self.shape(b));
                    for row in gy.data().chunks(dout) {
                        for (d, &g) in db.data_mut().iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    acc(b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, gy.clone());
                acc(*b, gy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, gy.clone());
                acc(*b, gy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let d = gy.data().iter().zip(bv.data()).map(|(&g, &y)| g * y).collect();
                    acc(*a, Tensor::from_vec(gy.shape(), d).unwrap());
                }
                if self.ng(*b) {
                    let d = gy.data().iter().zip(av.data()).map(|(&g, &x)| g * x).collect();
                    acc(*b, Tensor::from_vec(gy.shape(), d).unwrap());
                }
            }
            Op::AddBroadcast { x, b } => {
                acc(*x, gy.clone());
                if self.ng(*b) {
                    let s = dims4(gy.shape());
                    let plane = s[2] * s[3];
                    let d = gy.data().chunks(plane).map(|p| p.iter().copied().sum()).collect();
                    acc(*b, Tensor::from_vec(self.shape(*b), d).unwrap());
                }
            }
            Op::Scale(x, s) => {
                let sv = T::from_f64(*s);
                acc(*x, gy.map(|g| g * sv));
            }
            Op::AddScalar(x) => acc(*x, gy.clone()),
            Op::Sigmoid(x) => {
                let d = gy.data().iter().zip(y.data()).map(|(&g, &s)| g * s * (T::ONE - s)).collect();
                acc(*x, Tensor::from_vec(gy.shape(), d).unwrap());
            }
            Op::Tanh(x) => {
                let d = gy.data().iter().zip(y.data()).map(|(&g, &t)| g * (T::ONE - t * t)).collect();
                acc(*x, Tensor::from_vec(gy.shape(), d).unwrap());
            }
            Op::Relu(x) => {
                let d = gy
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&g, &o)| if o > T::ZERO { g } else { T::ZERO })
                    .collect();
                acc(*x, Tensor::from_vec(gy.shape(), d).unwrap());
            }
            Op::Exp(x) => {
                let d = gy.data().iter().zip(y.data()).map(|(&g, &e)| g * e).collect();
                acc(*x, Tensor::from_vec(gy.shape(), d).unwrap());
            }
            Op::Softmax(x) => {
                let k = *y.shape().last().unwrap();
                let mut d = gy.clone();
                for (dr, yr) in d.data_mut().chunks_mut(k).zip(y.data().chunks(k)) {
                    let dot: T = dr.iter().zip(yr).map(|(&g, &p)| g * p).sum();
                    for (g, &p) in dr.iter_mut().zip(yr) {
                        *g = p * (*g - dot);
                    }
                }
                acc(*x, d);
            }
            Op::LogSoftmax(x) => {
                let k = *y.shape().last().unwrap();
                let mut d = gy.clone();
                for (dr, yr) in d.data_mut().chunks_mut(k).zip(y.data().chunks(k)) {
                    let total: T = dr.iter().copied().sum();
                    for (g, &lp) in dr.iter_mut().zip(yr) {
                        *g -= lp.exp() * total;
                    }
                }
                acc(*x, d);
            }
            Op::SpatialMean(x) => {
                let s = self.shape(*x);
                let plane = s[2] * s[3];
                let inv = T::from_f64(1.0 / plane as f64);
                let mut d = Vec::with_capacity(s.iter().product());
                for &g in gy.data() {
                    d.extend(std::iter::repeat_n(g * inv, plane));
                }
                acc(*x, Tensor::from_vec(s, d).unwrap());
            }
            Op::SumRows(x) => {
                let s = self.shape(*x);
                let n = s[0];
                let per = self.value(*x).numel() / n.max(1);
                let mut d = Vec::with_capacity(n * per);
                for &g in gy.data() {
                    d.extend(std::iter::repeat_n(g, per));
                }
                acc(*x, Tensor::from_vec(s, d).unwrap());
            }
            Op::SumAll(x) => acc(*x, Tensor::full(self.shape(*x), gy.data()[0])),
            Op::MeanAll(x) => {
                let n = self.value(*x).numel();
                acc(*x, Tensor::full(self.shape(*x), gy.data()[0] * T::from_f64(1.0 / n as f64)));
            }
            Op::SumGroups { x, group } => {
                let s = self.shape(*x);
                let per = self.value(*x).numel() / s[0];
                let mut d = Vec::with_capacity(s[0] * per);
                for i in 0..s[0] {
                    let j = i / group;
                    d.extend_from_slice(&gy.data()[j * per..(j + 1) * per]);
                }
                acc(*x, Tensor::from_vec(s, d).unwrap());
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(gy.shape(), *axis);
                let mut offset = 0;
                for &x in xs {
                    let s = self.shape(x);
                    let len = s[*axis];
                    if self.ng(x) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&gy.data()[base..base + len * inner]);
                        }
                        acc(x, Tensor::from_vec(s, d).unwrap());
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let s = self.shape(*x);
                let (outer, alen, inner) = split_axis(s, *axis);
                let len = gy.shape()[*axis];
                let mut d = Tensor::zeros(s);
                for o in 0..outer {
                    let base = (o * alen + start) * inner;
                    d.data_mut()[base..base + len * inner]
                        .copy_from_slice(&gy.data()[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*x, d);
            }
            Op::Reshape(x) => acc(*x, gy.clone().reshaped(self.shape(*x)).unwrap()),
            Op::BroadcastSpatial(x) => {
                let s = gy.shape();
                let plane = s[2] * s[3];
                let d = gy.data().chunks(plane).map(|p| p.iter().copied().sum()).collect();
                acc(*x, Tensor::from_vec(self.shape(*x), d).unwrap());
            }
            Op::RepeatBatch { x, n } => {
                let per = self.value(*x).numel();
                let mut d = Tensor::zeros(self.shape(*x));
                for r in 0..*n {
                    for (a, &g) in d.data_mut().iter_mut().zip(&gy.data()[r * per..(r + 1) * per]) {
                        *a += g;
                    }
                }
                acc(*x, d);
            }
            Op::Bmm { a, b, ta, tb } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k) = if *ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
                let n = if *tb { sb[1] } else { sb[2] };
                let batch = gy.shape()[0];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.ng(*a) {
                    let mut d = Tensor::zeros(sa);
                    for i in 0..batch {
                        let ai = if sa[0] == 1 { 0 } else { i };
                        let bi = if sb[0] == 1 { 0 } else { i };
                        let g = &gy.data()[i * m * n..(i + 1) * m * n];
                        let bs = &bv[bi * k * n..(bi + 1) * k * n];
                        let da = &mut d.data_mut()[ai * m * k..(ai + 1) * m * k];
                        match (*ta, *tb) {
                            (false, false) => gemm(false, true, m, k, n, T::ONE, g, bs, T::ONE, da),
                            (false, true) => gemm(false, false, m, k, n, T::ONE, g, bs, T::ONE, da),
                            (true, false) => gemm(false, true, k, m, n, T::ONE, bs, g, T::ONE, da),
                            (true, true) => gemm(true, true, k, m, n, T::ONE, bs, g, T::ONE, da),
                        }
                    }
                    acc(*a, d);
                }
                if self.ng(*b) {
                    let mut d = Tensor::zeros(sb);
                    for i in 0..batch {
                        let ai = if sa[0] == 1 { 0 } else { i };
                        let bi = if sb[0] == 1 { 0 } else { i };
                        let g = &gy.data()[i * m * n..(i + 1) * m * n];
                        let as_ = &av[ai * m * k..(ai + 1) * m * k];
                        let db = &mut d.data_mut()[bi * k * n..(bi + 1) * k * n];
                        match (*ta, *tb) {
                            (false, false) => gemm(true, false, k, n, m, T::ONE, as_, g, T::ONE, db),
                            (true, false) => gemm(false, false, k, n, m, T::ONE, as_, g, T::ONE, db),
                            (false, true) => gemm(true, false, n, k, m, T::ONE, g, as_, T::ONE, db),
                            (true, true) => gemm(true, true, n, k, m, T::ONE, g, as_, T::ONE, db),
                        }
                    }
                    acc(*b, d);
                }
            }
            Op::Pick { x, idx } => {
                let s = self.shape(*x);
                let mut d = Tensor::zeros(s);
                for (r, (&c, &g)) in idx.iter().zip(gy.data()).enumerate() {
                    d.data_mut()[r * s[1] + c] += g;
                }
                acc(*x, d);
            }
            Op::Gather { x, idx } => {
                let mut d = Tensor::zeros(self.shape(*x));
                for (&i, &g) in idx.iter().zip(gy.data()) {
                    d.data_mut()[i] += g;
                }
                acc(*x, d);
            }
        }
    }
}

pub fn softmax_row<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(row[0], |a, b| a.max(b));
    let mut s = T::ZERO;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}

pub fn log_softmax_row<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(row[0], |a, b| a.max(b));
    let s: T = row.iter().map(|&v| (v - m).exp()).sum();
    let lse = m + s.ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}
