//! im2col-based convolution kernels on NCHW buffers.

use crate::par::{for_each_chunk_mut, Parallelism};
use crate::real::{gemm, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }
}

/// Output positions `o` in `0..out` whose input tap `o*stride + k - pad`
/// falls inside `0..len`.
fn valid_span(k: usize, out: usize, len: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if len + pad > k { ((len - 1 + pad - k) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// `x` is one `[c, h, w]` image; `col` receives `[c*k*k, ho*wo]`.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let cols = ho * wo;
    for c in 0..g.c {
        for ki in 0..g.k {
            let (ri0, ri1) = valid_span(ki, ho, g.h, g.stride, g.pad);
            for kj in 0..g.k {
                let (oj0, oj1) = valid_span(kj, wo, g.w, g.stride, g.pad);
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                dst[..ri0 * wo].fill(T::ZERO);
                dst[ri1 * wo..].fill(T::ZERO);
                for oi in ri0..ri1 {
                    let ii = oi * g.stride + ki - g.pad;
                    let src = &x[(c * g.h + ii) * g.w..(c * g.h + ii + 1) * g.w];
                    let line = &mut dst[oi * wo..(oi + 1) * wo];
                    line[..oj0].fill(T::ZERO);
                    line[oj1..].fill(T::ZERO);
                    if oj0 == oj1 {
                        continue;
                    }
                    let j0 = oj0 * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        line[oj0..oj1].copy_from_slice(&src[j0..j0 + oj1 - oj0]);
                    } else {
                        for (d, s) in line[oj0..oj1].iter_mut().zip(src[j0..].iter().step_by(g.stride)) {
                            *d = *s;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `col` into image `x` (which is not cleared).
pub fn col2im<T: Real>(col: &[T], g: &ConvGeom, x: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let cols = ho * wo;
    for c in 0..g.c {
        for ki in 0..g.k {
            let (ri0, ri1) = valid_span(ki, ho, g.h, g.stride, g.pad);
            for kj in 0..g.k {
                let (oj0, oj1) = valid_span(kj, wo, g.w, g.stride, g.pad);
                if oj0 == oj1 {
                    continue;
                }
                let row = (c * g.k + ki) * g.k + kj;
                let src = &col[row * cols..(row + 1) * cols];
                let j0 = oj0 * g.stride + kj - g.pad;
                for oi in ri0..ri1 {
                    let ii = oi * g.stride + ki - g.pad;
                    let base = (c * g.h + ii) * g.w;
                    let line = &src[oi * wo + oj0..oi * wo + oj1];
                    if g.stride == 1 {
                        for (d, s) in x[base + j0..base + j0 + line.len()].iter_mut().zip(line) {
                            *d += *s;
                        }
                    } else {
                        for (d, s) in x[base + j0..base + g.w].iter_mut().step_by(g.stride).zip(line) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation. `x`: `[n, g.c, g.h, g.w]`, `w`: `[cout, g.c, k, k]`.
pub fn conv2d_forward<T: Real>(
    mode: Parallelism,
    x: &[T],
    n: usize,
    g: &ConvGeom,
    w: &[T],
    bias: Option<&[T]>,
    cout: usize,
) -> Vec<T> {
    let (ho, wo) = g.out_hw();
    let per_out = cout * ho * wo;
    let per_in = g.c * g.h * g.w;
    let kk = g.col_rows();
    let mut out = vec![T::ZERO; n * per_out];
    for_each_chunk_mut(mode, &mut out, per_out, |s, o| {
        let xs = &x[s * per_in..(s + 1) * per_in];
        if g.is_pointwise() {
            gemm(false, false, cout, ho * wo, kk, T::ONE, w, xs, T::ZERO, o);
        } else {
            let mut col = vec![T::ZERO; kk * ho * wo];
            im2col(xs, g, &mut col);
            gemm(false, false, cout, ho * wo, kk, T::ONE, w, &col, T::ZERO, o);
        }
        if let Some(b) = bias {
            for (co, plane) in o.chunks_mut(ho * wo).enumerate() {
                for v in plane {
                    *v += b[co];
                }
            }
        }
    });
    out
}

/// Gradients of [`conv2d_forward`]. Any of the outputs may be skipped.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    mode: Parallelism,
    x: &[T],
    n: usize,
    g: &ConvGeom,
    w: &[T],
    cout: usize,
    dout: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (ho, wo) = g.out_hw();
    let hw = ho * wo;
    let per_out = cout * hw;
    let per_in = g.c * g.h * g.w;
    let kk = g.col_rows();
    if let Some(db) = db {
        for s in 0..n {
            for co in 0..cout {
                let plane = &dout[s * per_out + co * hw..s * per_out + (co + 1) * hw];
                db[co] += plane.iter().copied().sum::<T>();
            }
        }
    }
    if let Some(dw) = dw {
        let mut col = vec![T::ZERO; kk * hw];
        for s in 0..n {
            let xs = &x[s * per_in..(s + 1) * per_in];
            let ds = &dout[s * per_out..(s + 1) * per_out];
            if g.is_pointwise() {
                gemm(false, true, cout, kk, hw, T::ONE, ds, xs, T::ONE, dw);
            } else {
                im2col(xs, g, &mut col);
                gemm(false, true, cout, kk, hw, T::ONE, ds, &col, T::ONE, dw);
            }
        }
    }
    if let Some(dx) = dx {
        for_each_chunk_mut(mode, dx, per_in, |s, dxs| {
            let ds = &dout[s * per_out..(s + 1) * per_out];
            if g.is_pointwise() {
                gemm(true, false, kk, hw, cout, T::ONE, w, ds, T::ONE, dxs);
            } else {
                let mut col = vec![T::ZERO; kk * hw];
                gemm(true, false, kk, hw, cout, T::ONE, w, ds, T::ZERO, &mut col);
                col2im(&col, g, dxs);
            }
        });
    }
}

/// Transposed convolution, the adjoint of a conv whose *input* geometry is
/// `out_geom` (channels = cout). `x`: `[n, cin, hin, win]`, `w`: `[cin, cout, k, k]`.
#[allow(clippy::too_many_arguments)]
pub fn conv_t2d_forward<T: Real>(
    mode: Parallelism,
    x: &[T],
    n: usize,
    cin: usize,
    out_geom: &ConvGeom,
    w: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let (hin, win) = out_geom.out_hw();
    let hw_in = hin * win;
    let per_in = cin * hw_in;
    let per_out = out_geom.c * out_geom.h * out_geom.w;
    let kk = out_geom.col_rows();
    let mut out = vec![T::ZERO; n * per_out];
    for_each_chunk_mut(mode, &mut out, per_out, |s, o| {
        let xs = &x[s * per_in..(s + 1) * per_in];
        let mut col = vec![T::ZERO; kk * hw_in];
        gemm(true, false, kk, hw_in, cin, T::ONE, w, xs, T::ZERO, &mut col);
        col2im(&col, out_geom, o);
        if let Some(b) = bias {
            let plane = out_geom.h * out_geom.w;
            for (co, p) in o.chunks_mut(plane).enumerate() {
                for v in p {
                    *v += b[co];
                }
            }
        }
    });
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_t2d_backward<T: Real>(
    mode: Parallelism,
    x: &[T],
    n: usize,
    cin: usize,
    out_geom: &ConvGeom,
    w: &[T],
    dout: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (hin, win) = out_geom.out_hw();
    let hw_in = hin * win;
    let per_in = cin * hw_in;
    let plane = out_geom.h * out_geom.w;
    let per_out = out_geom.c * plane;
    let kk = out_geom.col_rows();
    if let Some(db) = db {
        for s in 0..n {
            for (co, d) in db.iter_mut().enumerate() {
                let p = &dout[s * per_out + co * plane..s * per_out + (co + 1) * plane];
                *d += p.iter().copied().sum::<T>();
            }
        }
    }
    if let Some(dw) = dw {
        let mut col = vec![T::ZERO; kk * hw_in];
        for s in 0..n {
            im2col(&dout[s * per_out..(s + 1) * per_out], out_geom, &mut col);
            let xs = &x[s * per_in..(s + 1) * per_in];
            gemm(false, true, cin, kk, hw_in, T::ONE, xs, &col, T::ONE, dw);
        }
    }
    if let Some(dx) = dx {
        for_each_chunk_mut(mode, dx, per_in, |s, dxs| {
            let mut col = vec![T::ZERO; kk * hw_in];
            im2col(&dout[s * per_out..(s + 1) * per_out], out_geom, &mut col);
            gemm(false, false, cin, hw_in, kk, T::ONE, w, &col, T::ONE, dxs);
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (ho, wo) = g.out_hw();
        let mut col = vec![0.0; g.col_rows() * ho * wo];
        for c in 0..g.c {
            for ki in 0..g.k {
                for kj in 0..g.k {
                    let row = (c * g.k + ki) * g.k + kj;
                    for oi in 0..ho {
                        for oj in 0..wo {
                            let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                            let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                            if ii >= 0 && jj >= 0 && (ii as usize) < g.h && (jj as usize) < g.w {
                                col[row * ho * wo + oi * wo + oj] = x[(c * g.h + ii as usize) * g.w + jj as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    #[test]
    fn im2col_and_adjoint_match_reference() {
        for &(h, w, k, stride, pad) in
            &[(6, 6, 3, 1, 1), (7, 5, 3, 2, 1), (8, 8, 2, 2, 0), (5, 5, 5, 1, 2), (4, 6, 4, 2, 1), (3, 3, 1, 1, 0), (2, 2, 5, 1, 2)]
        {
            let g = ConvGeom { c: 2, h, w, k, stride, pad };
            let x: Vec<f64> = (0..2 * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
            let reference = naive_im2col(&x, &g);
            let mut col = vec![f64::NAN; reference.len()];
            im2col(&x, &g, &mut col);
            assert_eq!(col, reference, "{g:?}");
            // <im2col(x), y> == <x, col2im(y)>
            let y: Vec<f64> = (0..col.len()).map(|i| (i as f64 * 0.11).cos()).collect();
            let mut back = vec![0.0; x.len()];
            col2im(&y, &g, &mut back);
            let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9, "{g:?}");
        }
    }
}
