use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use super::{Morphology, NUM_JOINTS, NUM_LEGS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyPose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl BodyPose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }
}

/// Foot position relative to its hip, in the body frame.
pub fn leg_foot_position(joints: [f64; 3], l1: f64, l2: f64) -> Vector3<f64> {
    let [a, h, k] = joints;
    let px = l1 * h.sin() + l2 * (h + k).sin();
    let pz = -l1 * h.cos() - l2 * (h + k).cos();
    let (sa, ca) = a.sin_cos();
    Vector3::new(px, -pz * sa, pz * ca)
}

/// Columns are d(foot)/d(abduction, hip, knee) in the body frame.
pub fn leg_jacobian(joints: [f64; 3], l1: f64, l2: f64) -> Matrix3<f64> {
    let [a, h, k] = joints;
    let (sa, ca) = a.sin_cos();
    let pz = -l1 * h.cos() - l2 * (h + k).cos();
    let dx_dh = l1 * h.cos() + l2 * (h + k).cos();
    let dz_dh = l1 * h.sin() + l2 * (h + k).sin();
    let dx_dk = l2 * (h + k).cos();
    let dz_dk = l2 * (h + k).sin();
    Matrix3::new(
        0.0,
        dx_dh,
        dx_dk,
        -pz * ca,
        -dz_dh * sa,
        -dz_dk * sa,
        -pz * sa,
        dz_dh * ca,
        dz_dk * ca,
    )
}

pub(crate) fn leg_joints(q: &[f64; NUM_JOINTS], leg: usize) -> [f64; 3] {
    [q[3 * leg], q[3 * leg + 1], q[3 * leg + 2]]
}

/// Foot positions relative to the body origin, body frame.
pub(crate) fn feet_in_body(q: &[f64; NUM_JOINTS], morph: &Morphology) -> [Vector3<f64>; NUM_LEGS] {
    let (l1, l2) = morph.link_lengths;
    std::array::from_fn(|leg| morph.hip(leg) + leg_foot_position(leg_joints(q, leg), l1, l2))
}

/// World-frame foot positions for joint angles `q` and the given body pose.
pub fn foot_positions(
    q: &[f64; NUM_JOINTS],
    morph: &Morphology,
    pose: &BodyPose,
) -> [Vector3<f64>; NUM_LEGS] {
    feet_in_body(q, morph).map(|p| pose.position + pose.orientation * p)
}
