//! The 7-value pose encoding consumed by every network.

use gqnloc_nn::{Real, Tensor};
use gqnloc_world::{wrap_yaw, CameraPose};

/// `(x, y, z, sin yaw, cos yaw, sin pitch, cos pitch)`, angles wrapped first.
pub fn encode_pose(p: &CameraPose) -> [f64; 7] {
    let (sy, cy) = wrap_yaw(p.yaw).to_radians().sin_cos();
    let (sp, cp) = p.pitch.to_radians().sin_cos();
    [p.x, p.y, p.z, sy, cy, sp, cp]
}

/// `[n, 7]` tensor of encodings.
pub fn pose_tensor<'a, T: Real>(poses: impl IntoIterator<Item = &'a CameraPose>) -> Tensor<T> {
    let data: Vec<T> = poses.into_iter().flat_map(|p| encode_pose(p).map(T::from_f64)).collect();
    let n = data.len() / 7;
    Tensor::from_vec(&[n, 7], data).expect("pose tensor")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_examples() {
        let e = encode_pose(&CameraPose { x: 0.1, y: -0.2, z: 0.3, yaw: 0.0, pitch: 0.0 });
        assert_eq!(e, [0.1, -0.2, 0.3, 0.0, 1.0, 0.0, 1.0]);
        let e = encode_pose(&CameraPose { yaw: 90.0, ..CameraPose::default() });
        assert!((e[3] - 1.0).abs() < 1e-7 && e[4].abs() < 1e-7);
        let a = encode_pose(&CameraPose { yaw: -180.0, ..CameraPose::default() });
        let b = encode_pose(&CameraPose { yaw: 180.0, ..CameraPose::default() });
        assert_eq!(a, b);
    }
}
