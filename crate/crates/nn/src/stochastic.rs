//! Reparameterized Gaussian sampling and diagonal-Gaussian KL.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{mismatch, Result};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// Standard normal tensor from a seeded generator.
pub fn standard_normal<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::from_f64(z)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape")
}

/// `mean + exp(log_std) * eps`; gradients flow to `mean` and `log_std`.
pub fn gaussian_sample<T: Real>(g: &mut Graph<'_, T>, mean: Var, log_std: Var, eps: Tensor<T>) -> Result<Var> {
    if g.shape(mean) != g.shape(log_std) || g.shape(mean) != eps.shape() {
        return Err(mismatch("gaussian_sample", g.shape(mean), eps.shape()));
    }
    let e = g.constant(eps);
    let std = g.exp(log_std)?;
    let noise = g.mul(std, e)?;
    g.add(mean, noise)
}

/// Per-batch-item `KL(q || p)` for diagonal Gaussians, summed over all
/// non-batch elements:
/// `log(sp/sq) + (sq^2 + (mq - mp)^2) / (2 sp^2) - 1/2`.
pub fn kl_diag_gaussian<T: Real>(g: &mut Graph<'_, T>, mean_q: Var, log_std_q: Var, mean_p: Var, log_std_p: Var) -> Result<Var> {
    let s = g.shape(mean_q).to_vec();
    for v in [log_std_q, mean_p, log_std_p] {
        if g.shape(v) != s.as_slice() {
            return Err(mismatch("kl_diag_gaussian", &s, g.shape(v)));
        }
    }
    let log_ratio = g.sub(log_std_p, log_std_q)?;
    let d = g.sub(log_std_q, log_std_p)?;
    let d2 = g.scale(d, 2.0)?;
    let var_ratio = g.exp(d2)?;
    let dm = g.sub(mean_q, mean_p)?;
    let dm2 = g.mul(dm, dm)?;
    let neg2lp = g.scale(log_std_p, -2.0)?;
    let inv_var_p = g.exp(neg2lp)?;
    let scaled = g.mul(dm2, inv_var_p)?;
    let quad = g.add(var_ratio, scaled)?;
    let half_quad = g.scale(quad, 0.5)?;
    let kl = g.add(log_ratio, half_quad)?;
    let kl = g.add_scalar(kl, -0.5)?;
    g.sum_rows(kl)
}
