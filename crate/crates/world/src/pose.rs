//! Camera poses. z is up; yaw 0 faces +x and grows counter-clockwise towards
//! +y; positive pitch looks down.

pub const PITCH_MIN: f64 = -20.0;
pub const PITCH_MAX: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct CameraPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Degrees in [-180, 180).
    pub yaw: f64,
    /// Degrees in [-20, 30).
    pub pitch: f64,
}

impl CameraPose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64, pitch: f64) -> Self {
        Self { x, y, z, yaw: wrap_yaw(yaw), pitch: clamp_pitch(pitch) }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.x, self.y, self.z, self.yaw, self.pitch]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self { x: a[0], y: a[1], z: a[2], yaw: a[3], pitch: a[4] }
    }

    /// Unit view direction.
    pub fn forward(&self) -> [f64; 3] {
        let (y, p) = (self.yaw.to_radians(), self.pitch.to_radians());
        [p.cos() * y.cos(), p.cos() * y.sin(), -p.sin()]
    }

    pub fn right(&self) -> [f64; 3] {
        let y = self.yaw.to_radians();
        [y.sin(), -y.cos(), 0.0]
    }

    pub fn up(&self) -> [f64; 3] {
        let (y, p) = (self.yaw.to_radians(), self.pitch.to_radians());
        [p.sin() * y.cos(), p.sin() * y.sin(), p.cos()]
    }
}

pub fn wrap_yaw(deg: f64) -> f64 {
    let w = (deg + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs.
    if w >= 180.0 { w - 360.0 } else { w }
}

pub fn clamp_pitch(deg: f64) -> f64 {
    deg.clamp(PITCH_MIN, PITCH_MAX.next_down())
}

/// Signed shortest angular difference `a - b` in degrees, in [-180, 180).
pub fn yaw_difference(a: f64, b: f64) -> f64 {
    wrap_yaw(a - b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_cases() {
        assert_eq!(wrap_yaw(180.0), -180.0);
        assert_eq!(wrap_yaw(-180.0), -180.0);
        assert_eq!(wrap_yaw(370.0), 10.0);
        assert!(wrap_yaw(-1e-17) < 180.0);
        assert_eq!(yaw_difference(179.0, -179.0), -2.0);
    }

    #[test]
    fn basis_is_orthonormal() {
        let p = CameraPose::new(0.0, 0.0, 0.0, 37.0, 12.0);
        let (f, r, u) = (p.forward(), p.right(), p.up());
        let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        assert!(dot(f, r).abs() < 1e-12 && dot(f, u).abs() < 1e-12 && dot(r, u).abs() < 1e-12);
        assert!((dot(f, f) - 1.0).abs() < 1e-12);
        assert!(f[2] < 0.0);
    }
}
