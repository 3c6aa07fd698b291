//! Quantization of pose space into the four categorical heads.

use gqnloc_world::CameraPose;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Head {
    Xy,
    Z,
    Yaw,
    Pitch,
}

impl Head {
    pub const ALL: [Head; 4] = [Head::Xy, Head::Z, Head::Yaw, Head::Pitch];

    pub fn name(self) -> &'static str {
        match self {
            Head::Xy => "xy",
            Head::Z => "z",
            Head::Yaw => "yaw",
            Head::Pitch => "pitch",
        }
    }

    /// Number of categories.
    pub fn size(self) -> usize {
        match self {
            Head::Xy => XY_AXIS.n * XY_AXIS.n,
            Head::Z => Z_AXIS.n,
            Head::Yaw => YAW_AXIS.n,
            Head::Pitch => PITCH_AXIS.n,
        }
    }
}

/// Half-open interval `[lo, lo + n * width)` split into `n` bins.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub width: f64,
    pub n: usize,
}

impl Axis {
    /// Out-of-domain values land in the edge bins.
    pub fn index(&self, v: f64) -> usize {
        let i = ((v - self.lo) / self.width).floor();
        if i.is_nan() || i < 0.0 {
            0
        } else {
            (i as usize).min(self.n - 1)
        }
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.lo + i as f64 * self.width).collect()
    }
}

pub const XY_AXIS: Axis = Axis { lo: -1.0, width: 0.02, n: 100 };
pub const Z_AXIS: Axis = Axis { lo: -1.0, width: 0.02, n: 100 };
pub const YAW_AXIS: Axis = Axis { lo: -180.0, width: 1.0, n: 360 };
pub const PITCH_AXIS: Axis = Axis { lo: -20.0, width: 1.0, n: 50 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BinIndex {
    pub ix: usize,
    pub iy: usize,
    pub z: usize,
    pub yaw: usize,
    pub pitch: usize,
}

impl BinIndex {
    /// Flat xy index, row-major in x.
    pub fn xy(&self) -> usize {
        xy_flat(self.ix, self.iy)
    }

    pub fn get(&self, head: Head) -> usize {
        match head {
            Head::Xy => self.xy(),
            Head::Z => self.z,
            Head::Yaw => self.yaw,
            Head::Pitch => self.pitch,
        }
    }
}

pub fn xy_flat(ix: usize, iy: usize) -> usize {
    ix * XY_AXIS.n + iy
}

pub fn xy_unflat(i: usize) -> (usize, usize) {
    (i / XY_AXIS.n, i % XY_AXIS.n)
}

pub fn bin_index(p: &CameraPose) -> BinIndex {
    BinIndex {
        ix: XY_AXIS.index(p.x),
        iy: XY_AXIS.index(p.y),
        z: Z_AXIS.index(p.z),
        yaw: YAW_AXIS.index(gqnloc_world::wrap_yaw(p.yaw)),
        pitch: PITCH_AXIS.index(p.pitch),
    }
}

pub fn bin_center(b: &BinIndex) -> CameraPose {
    CameraPose {
        x: XY_AXIS.center(b.ix),
        y: XY_AXIS.center(b.iy),
        z: Z_AXIS.center(b.z),
        yaw: YAW_AXIS.center(b.yaw),
        pitch: PITCH_AXIS.center(b.pitch),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binning_examples() {
        assert_eq!(XY_AXIS.index(-1.0), 0);
        assert_eq!(XY_AXIS.index(0.999), 99);
        assert_eq!(XY_AXIS.index(1.0), 99);
        assert_eq!(XY_AXIS.index(-7.0), 0);
        assert_eq!(YAW_AXIS.index(0.0), 180);
        assert_eq!(YAW_AXIS.center(180), 0.5);
        assert!((XY_AXIS.center(30) + 0.39).abs() < 1e-12);
        assert!((XY_AXIS.center(70) - 0.41).abs() < 1e-12);
    }
}
