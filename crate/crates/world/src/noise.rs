//! Lattice value noise with fractal octaves.

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a channel tag and two lattice coordinates.
pub(crate) fn hash3(seed: u64, tag: u64, a: i64, b: i64) -> u64 {
    let h = splitmix64(seed ^ tag.wrapping_mul(0xA24B_AED4_963E_E407));
    let h = splitmix64(h ^ (a as u64).wrapping_mul(0x9FB2_1C65_1E98_DF25));
    splitmix64(h ^ (b as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub(crate) fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Value noise in [0, 1) with lattice spacing `period`.
pub fn value_noise(seed: u64, tag: u64, x: f64, y: f64, period: f64) -> f64 {
    let (fx, fy) = (x / period, y / period);
    let (ix, iy) = (fx.floor(), fy.floor());
    let (tx, ty) = (smooth(fx - ix), smooth(fy - iy));
    let (ix, iy) = (ix as i64, iy as i64);
    let v = |a, b| unit(hash3(seed, tag, a, b));
    let top = v(ix, iy) * (1.0 - tx) + v(ix + 1, iy) * tx;
    let bottom = v(ix, iy + 1) * (1.0 - tx) + v(ix + 1, iy + 1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Sum of `octaves` value-noise layers, halving period and amplitude each
/// octave, rescaled to [0, 1).
pub fn fbm(seed: u64, tag: u64, x: f64, y: f64, period: f64, octaves: u32) -> f64 {
    let (mut sum, mut norm, mut amp, mut p) = (0.0, 0.0, 1.0, period);
    for o in 0..octaves {
        sum += amp * value_noise(seed, tag.wrapping_add(o as u64 * 7919), x, y, p);
        norm += amp;
        amp *= 0.5;
        p *= 0.5;
    }
    sum / norm
}
