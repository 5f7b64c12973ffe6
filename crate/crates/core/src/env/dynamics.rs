use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::contact::{contact_force, ContactParams};
use super::kinematics::{feet_in_body, leg_jacobian, leg_joints, BodyPose};
use super::terrain::{terrain_height, Terrain};
use super::{mirror_leg, Morphology, NUM_JOINTS, NUM_LEGS};
use crate::error::{MasqError, Result};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    /// Body-frame linear velocity.
    pub lin_vel: Vector3<f64>,
    /// Body-frame angular velocity.
    pub ang_vel: Vector3<f64>,
    pub q: [f64; NUM_JOINTS],
    pub qdot: [f64; NUM_JOINTS],
    /// World-frame ground reaction on each foot during the last step.
    pub foot_forces: [Vector3<f64>; NUM_LEGS],
    /// World-frame foot velocities during the last step.
    pub foot_vels: [Vector3<f64>; NUM_LEGS],
    /// Ground reaction on the hip proxy spheres (body collisions).
    pub hip_forces: [Vector3<f64>; NUM_LEGS],
    /// Torques actually delivered by the motors during the last step.
    pub applied_torques: [f64; NUM_JOINTS],
    pub time: f64,
}

impl RobotState {
    pub fn pose(&self) -> BodyPose {
        BodyPose {
            position: self.position,
            orientation: self.orientation,
        }
    }

    pub fn world_lin_vel(&self) -> Vector3<f64> {
        self.orientation * self.lin_vel
    }

    /// `(roll, pitch, yaw)`.
    pub fn euler(&self) -> (f64, f64, f64) {
        self.orientation.euler_angles()
    }

    pub fn is_finite(&self) -> bool {
        let v3 = |v: &Vector3<f64>| v.iter().all(|x| x.is_finite());
        v3(&self.position)
            && self.orientation.coords.iter().all(|x| x.is_finite())
            && v3(&self.lin_vel)
            && v3(&self.ang_vel)
            && self.q.iter().chain(&self.qdot).all(|x| x.is_finite())
            && self.foot_forces.iter().all(v3)
            && self.foot_vels.iter().all(v3)
            && self.hip_forces.iter().all(v3)
            && self.time.is_finite()
    }

    /// Body height above the terrain directly below the body origin.
    pub fn height_above(&self, terrain: &Terrain) -> f64 {
        self.position.z - terrain_height(terrain, self.position.x, self.position.y)
    }

    /// Reflection across the body's sagittal (x-z) plane: left and right legs
    /// swap, abduction angles and lateral components change sign.
    pub fn mirrored(&self) -> RobotState {
        let flip = |v: &Vector3<f64>| Vector3::new(v.x, -v.y, v.z);
        let flip_axial = |v: &Vector3<f64>| Vector3::new(-v.x, v.y, -v.z);
        let qc = self.orientation.quaternion();
        let orientation =
            UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(qc.w, -qc.i, qc.j, -qc.k));
        let joint = |arr: &[f64; NUM_JOINTS]| -> [f64; NUM_JOINTS] {
            std::array::from_fn(|j| {
                let (leg, k) = (j / 3, j % 3);
                let v = arr[3 * mirror_leg(leg) + k];
                if k == 0 {
                    -v
                } else {
                    v
                }
            })
        };
        let legs = |arr: &[Vector3<f64>; NUM_LEGS]| -> [Vector3<f64>; NUM_LEGS] {
            std::array::from_fn(|l| flip(&arr[mirror_leg(l)]))
        };
        RobotState {
            position: flip(&self.position),
            orientation,
            lin_vel: flip(&self.lin_vel),
            ang_vel: flip_axial(&self.ang_vel),
            q: joint(&self.q),
            qdot: joint(&self.qdot),
            foot_forces: legs(&self.foot_forces),
            foot_vels: legs(&self.foot_vels),
            hip_forces: legs(&self.hip_forces),
            applied_torques: joint(&self.applied_torques),
            time: self.time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuatorParams {
    pub kp: f64,
    pub kd: f64,
    pub action_scale: f64,
    pub tau_max: f64,
    /// First-order torque lag time constant in seconds; 0 disables the lag.
    pub tau_lag: f64,
}

impl Default for ActuatorParams {
    fn default() -> Self {
        Self {
            kp: 20.0,
            kd: 0.5,
            action_scale: 0.25,
            tau_max: 23.7,
            tau_lag: 0.0,
        }
    }
}

/// Everything `env_step` needs besides the state, terrain and time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Physics {
    pub morph: Morphology,
    pub contact: ContactParams,
    pub gravity: Vector3<f64>,
    pub tau_lag: f64,
}

impl Physics {
    pub fn new(morph: Morphology, contact: ContactParams) -> Self {
        Self {
            morph,
            contact,
            gravity: Vector3::new(0.0, 0.0, -GRAVITY),
            tau_lag: 0.0,
        }
    }
}

/// Joint-space PD law around `default_pose + action_scale * action`.
pub fn pd_torque(
    action: &[f64; NUM_JOINTS],
    q: &[f64; NUM_JOINTS],
    qdot: &[f64; NUM_JOINTS],
    act: &ActuatorParams,
    default_pose: &[f64; NUM_JOINTS],
) -> [f64; NUM_JOINTS] {
    std::array::from_fn(|j| {
        let target = default_pose[j] + act.action_scale * action[j];
        let tau = act.kp * (target - q[j]) - act.kd * qdot[j];
        tau.clamp(-act.tau_max, act.tau_max)
    })
}

/// Robot in its default pose, standing with the lowest foot touching the
/// terrain, at rest. The seed only picks the spawn point in `[-0.5, 0.5]^2`.
pub fn env_reset(morph: &Morphology, terrain: &Terrain, seed: u64) -> Result<RobotState> {
    morph.validate()?;
    terrain.validate()?;
    let feet = feet_in_body(&morph.default_pose, morph);
    if feet.iter().any(|f| f.z >= -morph.hip_radius) {
        return Err(MasqError::Config(
            "default pose cannot reach the ground below the hips".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rng.random_range(-0.5..0.5);
    let y = rng.random_range(-0.5..0.5);
    let z = feet
        .iter()
        .map(|f| terrain_height(terrain, x + f.x, y + f.y) - f.z)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(RobotState {
        position: Vector3::new(x, y, z),
        orientation: UnitQuaternion::identity(),
        lin_vel: Vector3::zeros(),
        ang_vel: Vector3::zeros(),
        q: morph.default_pose,
        qdot: [0.0; NUM_JOINTS],
        foot_forces: [Vector3::zeros(); NUM_LEGS],
        foot_vels: [Vector3::zeros(); NUM_LEGS],
        hip_forces: [Vector3::zeros(); NUM_LEGS],
        applied_torques: [0.0; NUM_JOINTS],
        time: 0.0,
    })
}

#[inline]
fn pair_sum(v: &[Vector3<f64>; 4]) -> Vector3<f64> {
    // (FL + FR) + (RL + RR) keeps the sum exactly mirror-symmetric
    (v[0] + v[1]) + (v[2] + v[3])
}

/// Advance the simulation by `dt` with the commanded motor torques.
pub fn env_step(
    state: &RobotState,
    torques: &[f64; NUM_JOINTS],
    phys: &Physics,
    terrain: &Terrain,
    dt: f64,
) -> Result<RobotState> {
    if !(dt > 0.0) {
        return Err(MasqError::Config(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let m = &phys.morph;
    let applied: [f64; NUM_JOINTS] = if phys.tau_lag > 0.0 {
        let a = (dt / phys.tau_lag).min(1.0);
        std::array::from_fn(|j| {
            state.applied_torques[j] + a * (torques[j] - state.applied_torques[j])
        })
    } else {
        *torques
    };

    let mut q = state.q;
    let mut qdot = state.qdot;
    for j in 0..NUM_JOINTS {
        let qdd = (applied[j] - m.joint_damping * qdot[j]) / m.joint_inertia;
        qdot[j] += qdd * dt;
        q[j] += qdot[j] * dt;
    }

    let cp = ContactParams {
        mu: phys.contact.mu * terrain.friction,
        d_normal: phys.contact.d_normal * (1.0 - terrain.restitution).clamp(0.0, 1.0),
        ..phys.contact
    };
    let rot = state.orientation;
    let v_world = rot * state.lin_vel;
    let w_world = rot * state.ang_vel;
    let (l1, l2) = m.link_lengths;
    let feet_b = feet_in_body(&q, m);

    let mut foot_forces = [Vector3::zeros(); NUM_LEGS];
    let mut foot_vels = [Vector3::zeros(); NUM_LEGS];
    let mut moments = [Vector3::zeros(); NUM_LEGS];
    for leg in 0..NUM_LEGS {
        let r = rot * feet_b[leg];
        let joints = leg_joints(&q, leg);
        let jd = leg_jacobian(joints, l1, l2)
            * Vector3::new(qdot[3 * leg], qdot[3 * leg + 1], qdot[3 * leg + 2]);
        let vel = v_world + w_world.cross(&r) + rot * jd;
        let f = contact_force(&(state.position + r), &vel, terrain, &cp);
        foot_forces[leg] = f;
        foot_vels[leg] = vel;
        moments[leg] = r.cross(&f);
    }
    let mut hip_forces = [Vector3::zeros(); NUM_LEGS];
    let mut hip_moments = [Vector3::zeros(); NUM_LEGS];
    if m.hip_radius > 0.0 {
        for leg in 0..NUM_LEGS {
            let r = rot * m.hip(leg) - Vector3::new(0.0, 0.0, m.hip_radius);
            let vel = v_world + w_world.cross(&r);
            let f = contact_force(&(state.position + r), &vel, terrain, &cp);
            hip_forces[leg] = f;
            hip_moments[leg] = r.cross(&f);
        }
    }

    let force = phys.gravity * m.body_mass + pair_sum(&foot_forces) + pair_sum(&hip_forces);
    let moment = pair_sum(&moments) + pair_sum(&hip_moments);

    let v_next = v_world + force * (dt / m.body_mass);
    let position = state.position + v_next * dt;

    // world angular momentum is advanced first, then re-expressed in the new
    // body frame, which conserves it exactly when no moment acts
    let inertia = Vector3::from(m.body_inertia);
    let momentum = rot * state.ang_vel.component_mul(&inertia) + moment * dt;
    let w_mid = (rot.inverse() * momentum).component_div(&inertia);
    let orientation = UnitQuaternion::new_normalize(
        (rot * UnitQuaternion::from_scaled_axis(w_mid * dt)).into_inner(),
    );
    let ang_vel = (orientation.inverse() * momentum).component_div(&inertia);
    let lin_vel = orientation.inverse() * v_next;

    let next = RobotState {
        position,
        orientation,
        lin_vel,
        ang_vel,
        q,
        qdot,
        foot_forces,
        foot_vels,
        hip_forces,
        applied_torques: applied,
        time: state.time + dt,
    };
    if !next.is_finite() {
        return Err(MasqError::SimulationFault(format!(
            "non-finite state at t = {:.4}",
            next.time
        )));
    }
    Ok(next)
}

/// Instantaneous push: `impulse` (body frame, N*s) changes the body velocity
/// by `impulse / mass`.
pub fn apply_push(state: &RobotState, impulse: &Vector3<f64>, body_mass: f64) -> RobotState {
    let mut next = state.clone();
    next.lin_vel += impulse / body_mass;
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::kinematics::foot_positions;
    use crate::env::{TerrainKind, UnevenParams};
    use proptest::prelude::*;

    fn settle(phys: &Physics, terrain: &Terrain, seconds: f64) -> RobotState {
        let mut s = env_reset(&phys.morph, terrain, 0).unwrap();
        let dt = 0.005;
        let steps = (seconds / dt).round() as usize;
        for _ in 0..steps {
            s = env_step(&s, &[0.0; 12], phys, terrain, dt).unwrap();
        }
        s
    }

    #[test]
    fn pd_equilibrium_is_zero() {
        let m = Morphology::default();
        let t = pd_torque(
            &[0.0; 12],
            &m.default_pose,
            &[0.0; 12],
            &ActuatorParams::default(),
            &m.default_pose,
        );
        assert_eq!(t, [0.0; 12]);
    }

    #[test]
    fn pd_position_and_damping_terms() {
        let m = Morphology::default();
        let act = ActuatorParams::default();
        let t = pd_torque(
            &[1.0; 12],
            &m.default_pose,
            &[0.0; 12],
            &act,
            &m.default_pose,
        );
        assert!(t.iter().all(|&v| (v - 5.0).abs() < 1e-12));
        let t = pd_torque(
            &[0.0; 12],
            &m.default_pose,
            &[1.0; 12],
            &act,
            &m.default_pose,
        );
        assert!(t.iter().all(|&v| (v + 0.5).abs() < 1e-15));
        let t = pd_torque(
            &[100.0; 12],
            &m.default_pose,
            &[0.0; 12],
            &act,
            &m.default_pose,
        );
        assert!(t.iter().all(|&v| v == act.tau_max));
    }

    #[test]
    fn reset_on_flat_touches_ground() {
        let m = Morphology::default();
        let t = Terrain::flat();
        let s = env_reset(&m, &t, 7).unwrap();
        for f in foot_positions(&s.q, &m, &s.pose()) {
            assert!(f.z.abs() < 1e-6);
        }
        assert_eq!(s, env_reset(&m, &t, 7).unwrap());
    }

    #[test]
    fn reset_on_uneven_touches_without_penetrating() {
        let m = Morphology::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = Terrain::uneven(
            &UnevenParams {
                half_extent: 2.0,
                ..Default::default()
            },
            &mut rng,
        );
        assert_eq!(t.kind, TerrainKind::Uneven);
        for seed in 0..10 {
            let s = env_reset(&m, &t, seed).unwrap();
            let clearances: Vec<f64> = foot_positions(&s.q, &m, &s.pose())
                .iter()
                .map(|f| f.z - terrain_height(&t, f.x, f.y))
                .collect();
            let min = clearances.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min.abs() < 1e-6, "seed {seed}: min clearance {min}");
            assert!(clearances.iter().all(|&c| c > -1e-6));
        }
    }

    #[test]
    fn unreachable_default_pose_rejected() {
        let mut m = Morphology::default();
        m.default_pose[1] = 3.0;
        m.default_pose[2] = 0.0;
        assert!(env_reset(&m, &Terrain::flat(), 0).is_err());
    }

    #[test]
    fn resting_robot_carries_its_weight() {
        let phys = Physics::new(Morphology::default(), ContactParams::default());
        let t = Terrain::flat();
        let s = settle(&phys, &t, 1.0);
        let total: f64 = s.foot_forces.iter().map(|f| f.z).sum();
        let weight = phys.morph.body_mass * GRAVITY;
        assert!(
            (total - weight).abs() / weight < 0.02,
            "{total} vs {weight}"
        );
        // max penetration bounded by the per-foot load over stiffness
        let feet = foot_positions(&s.q, &phys.morph, &s.pose());
        let f_max = s.foot_forces.iter().map(|f| f.z).fold(0.0, f64::max);
        for f in feet {
            assert!(-f.z <= f_max / phys.contact.k_normal + 1e-3);
        }
    }

    #[test]
    fn free_flight_conserves_momentum() {
        let mut phys = Physics::new(Morphology::default(), ContactParams::default());
        phys.gravity = Vector3::zeros();
        let t = Terrain::flat();
        let mut s = env_reset(&phys.morph, &t, 0).unwrap();
        s.position.z += 5.0;
        s.lin_vel = Vector3::new(0.3, -0.2, 0.1);
        s.ang_vel = Vector3::new(0.5, -1.0, 2.0);
        let inertia = Vector3::from(phys.morph.body_inertia);
        let p0 = s.world_lin_vel() * phys.morph.body_mass;
        let l0 = s.orientation * s.ang_vel.component_mul(&inertia);
        for _ in 0..200 {
            let next = env_step(&s, &[0.0; 12], &phys, &t, 0.005).unwrap();
            let p = next.world_lin_vel() * phys.morph.body_mass;
            let l = next.orientation * next.ang_vel.component_mul(&inertia);
            assert!((p - p0).norm() < 1e-9);
            assert!((l - l0).norm() < 1e-9);
            assert!((next.orientation.coords.norm() - 1.0).abs() < 1e-9);
            s = next;
        }
    }

    #[test]
    fn step_is_deterministic() {
        let phys = Physics::new(Morphology::default(), ContactParams::default());
        let t = Terrain::flat();
        let s = settle(&phys, &t, 0.1);
        let tau = [
            1.0, -2.0, 0.5, 0.3, 0.0, -1.0, 2.0, 1.0, 0.0, -0.4, 0.2, 0.1,
        ];
        assert_eq!(
            env_step(&s, &tau, &phys, &t, 0.005).unwrap(),
            env_step(&s, &tau, &phys, &t, 0.005).unwrap()
        );
    }

    #[test]
    fn non_positive_dt_rejected() {
        let phys = Physics::new(Morphology::default(), ContactParams::default());
        let t = Terrain::flat();
        let s = env_reset(&phys.morph, &t, 0).unwrap();
        assert!(env_step(&s, &[0.0; 12], &phys, &t, 0.0).is_err());
    }

    #[test]
    fn push_changes_velocity_only() {
        let m = Morphology::default();
        let s = env_reset(&m, &Terrain::flat(), 0).unwrap();
        assert_eq!(apply_push(&s, &Vector3::zeros(), m.body_mass), s);
        let pushed = apply_push(&s, &Vector3::new(6.0, 0.0, 0.0), 12.0);
        assert!((pushed.lin_vel.x - 0.5).abs() < 1e-15);
        assert_eq!(pushed.position, s.position);
        let a = Vector3::new(1.0, 2.0, -0.5);
        let b = Vector3::new(-0.25, 0.5, 3.0);
        let twice = apply_push(&apply_push(&s, &a, 12.0), &b, 12.0);
        let once = apply_push(&s, &(a + b), 12.0);
        assert!((twice.lin_vel - once.lin_vel).norm() < 1e-15);
    }

    #[test]
    fn torque_lag_filters_commands() {
        let mut phys = Physics::new(Morphology::default(), ContactParams::default());
        phys.tau_lag = 0.01;
        let t = Terrain::flat();
        let s = env_reset(&phys.morph, &t, 0).unwrap();
        let next = env_step(&s, &[10.0; 12], &phys, &t, 0.005).unwrap();
        assert!(next
            .applied_torques
            .iter()
            .all(|&v| (v - 5.0).abs() < 1e-12));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn sagittal_mirror_symmetry(
            seed in 0u64..1000,
            tau in prop::array::uniform12(-10.0f64..10.0),
            vy in -0.5f64..0.5,
            wz in -1.0f64..1.0,
            roll in -0.2f64..0.2,
        ) {
            let phys = Physics::new(Morphology::default(), ContactParams::default());
            let t = Terrain::flat();
            let mut s = env_reset(&phys.morph, &t, seed).unwrap();
            s.position.z -= 0.004;
            s.lin_vel = Vector3::new(0.2, vy, -0.05);
            s.ang_vel = Vector3::new(0.1, -0.3, wz);
            s.orientation = UnitQuaternion::from_euler_angles(roll, 0.05, 0.3);
            let mirrored_tau: [f64; 12] = std::array::from_fn(|j| {
                let v = tau[3 * mirror_leg(j / 3) + j % 3];
                if j % 3 == 0 { -v } else { v }
            });
            let a = env_step(&s, &tau, &phys, &t, 0.005).unwrap().mirrored();
            let b = env_step(&s.mirrored(), &mirrored_tau, &phys, &t, 0.005).unwrap();
            prop_assert!((a.position - b.position).norm() < 1e-9);
            prop_assert!((a.lin_vel - b.lin_vel).norm() < 1e-9);
            prop_assert!((a.ang_vel - b.ang_vel).norm() < 1e-9);
            prop_assert!(a.orientation.angle_to(&b.orientation) < 1e-9);
            for j in 0..12 {
                prop_assert!((a.q[j] - b.q[j]).abs() < 1e-9);
                prop_assert!((a.qdot[j] - b.qdot[j]).abs() < 1e-9);
            }
            for l in 0..4 {
                prop_assert!((a.foot_forces[l] - b.foot_forces[l]).norm() < 1e-9);
                prop_assert!(b.foot_forces[l].z >= 0.0);
            }
        }
    }
}
