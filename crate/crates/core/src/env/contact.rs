use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::terrain::{terrain_height, Terrain};

/// Penalty contact: linear spring-damper along world z, regularised Coulomb
/// friction in the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactParams {
    pub k_normal: f64,
    pub d_normal: f64,
    pub mu: f64,
    /// Tangential speed below which friction turns viscous.
    pub v_slip_reg: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            k_normal: 5000.0,
            d_normal: 100.0,
            mu: 1.0,
            v_slip_reg: 0.1,
        }
    }
}

/// Ground reaction on a point at `pos` moving with `vel`.
pub fn contact_force(
    pos: &Vector3<f64>,
    vel: &Vector3<f64>,
    terrain: &Terrain,
    cp: &ContactParams,
) -> Vector3<f64> {
    let penetration = (terrain_height(terrain, pos.x, pos.y) - pos.z).max(0.0);
    if penetration <= 0.0 {
        return Vector3::zeros();
    }
    let f_n = (cp.k_normal * penetration - cp.d_normal * vel.z).max(0.0);
    let (vx, vy) = (vel.x, vel.y);
    let speed = (vx * vx + vy * vy).sqrt();
    let scale = -cp.mu * f_n / speed.max(cp.v_slip_reg);
    Vector3::new(scale * vx, scale * vy, f_n)
}
