//! Reduced-order quadruped simulator.
//!
//! A single rigid body carried by four 3-DOF legs. Legs are massless as far as
//! the body is concerned: each joint is an independent second-order system
//! driven by its motor torque, the resulting foot trajectory comes from
//! forward kinematics, and the body only feels the legs through spring-damper
//! ground contact at the feet (plus proxy spheres at the hips that stand in
//! for body collisions).
//!
//! Conventions used everywhere in the crate:
//! - leg order is `FL, FR, RL, RR`;
//! - joints per leg are `(abduction, hip pitch, knee)`, abduction about the
//!   body x axis, pitch joints about the leg y axis;
//! - with all joints at zero the leg hangs straight down, positive pitch
//!   angles swing the foot forward (+x), so a knee of `pi/2` alone puts the
//!   foot at `[l2, 0, -l1]` relative to the hip;
//! - linear and angular body velocities in [`RobotState`] are body-frame.

mod contact;
mod dynamics;
mod kinematics;
mod terrain;

pub use contact::{contact_force, ContactParams};
pub use dynamics::{
    apply_push, env_reset, env_step, pd_torque, ActuatorParams, Physics, RobotState, GRAVITY,
};
pub use kinematics::{foot_positions, leg_foot_position, leg_jacobian, BodyPose};
pub use terrain::{terrain_height, Terrain, TerrainKind, UnevenParams};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{MasqError, Result};

pub const NUM_LEGS: usize = 4;
pub const NUM_JOINTS: usize = 12;
pub const LEG_NAMES: [&str; NUM_LEGS] = ["FL", "FR", "RL", "RR"];

/// Leg index that mirrors `leg` across the sagittal plane.
pub const fn mirror_leg(leg: usize) -> usize {
    leg ^ 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Morphology {
    pub body_mass: f64,
    pub body_inertia: [f64; 3],
    pub hip_offsets: [[f64; 3]; NUM_LEGS],
    pub link_lengths: (f64, f64),
    pub joint_damping: f64,
    pub joint_inertia: f64,
    pub default_pose: [f64; NUM_JOINTS],
    /// Radius of the collision proxy sphere centred on each hip.
    pub hip_radius: f64,
}

impl Default for Morphology {
    fn default() -> Self {
        let (hx, hy) = (0.19, 0.13);
        let leg = [0.0, 0.8, -1.6];
        let mut default_pose = [0.0; NUM_JOINTS];
        for l in 0..NUM_LEGS {
            default_pose[3 * l..3 * l + 3].copy_from_slice(&leg);
        }
        Self {
            body_mass: 12.0,
            body_inertia: [0.10, 0.17, 0.25],
            hip_offsets: [
                [hx, hy, 0.0],
                [hx, -hy, 0.0],
                [-hx, hy, 0.0],
                [-hx, -hy, 0.0],
            ],
            link_lengths: (0.213, 0.213),
            joint_damping: 0.1,
            joint_inertia: 0.01,
            default_pose,
            hip_radius: 0.05,
        }
    }
}

impl Morphology {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.body_mass,
            self.body_inertia[0],
            self.body_inertia[1],
            self.body_inertia[2],
            self.link_lengths.0,
            self.link_lengths.1,
            self.joint_inertia,
        ];
        if positive.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(MasqError::Config(
                "morphology masses, inertias and lengths must be positive".into(),
            ));
        }
        if !(self.joint_damping >= 0.0) || !(self.hip_radius >= 0.0) {
            return Err(MasqError::Config(
                "joint damping and hip radius must be >= 0".into(),
            ));
        }
        for (a, b) in [(0, 1), (2, 3)] {
            let (l, r) = (self.hip_offsets[a], self.hip_offsets[b]);
            if l[0] != r[0] || l[1] != -r[1] || l[2] != r[2] {
                return Err(MasqError::Config(format!(
                    "hip offsets of {} and {} are not mirror images",
                    LEG_NAMES[a], LEG_NAMES[b]
                )));
            }
        }
        Ok(())
    }

    pub fn hip(&self, leg: usize) -> Vector3<f64> {
        let h = self.hip_offsets[leg];
        Vector3::new(h[0], h[1], h[2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_morphology_is_valid() {
        Morphology::default().validate().unwrap();
    }

    #[test]
    fn asymmetric_hips_rejected() {
        let mut m = Morphology::default();
        m.hip_offsets[1][1] = -0.12;
        assert!(m.validate().is_err());
        let mut m = Morphology::default();
        m.body_mass = 0.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn mirror_leg_pairs() {
        assert_eq!(mirror_leg(0), 1);
        assert_eq!(mirror_leg(1), 0);
        assert_eq!(mirror_leg(2), 3);
        assert_eq!(mirror_leg(3), 2);
    }
}
