//! Shaped locomotion reward. Every term is computed unweighted; the scalar
//! reward is the weighted sum and is shared by all four leg agents.

use std::collections::BTreeMap;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::env::{foot_positions, Morphology, RobotState, Terrain, NUM_JOINTS, NUM_LEGS};
use crate::error::{MasqError, Result};
use crate::obs::{directors, gait_phase, Command, GaitSpec};

/// Normal force above which a foot counts as touching the ground.
pub const CONTACT_THRESHOLD: f64 = 1.0;
/// Body collision proxies count as colliding above this force norm.
pub const COLLISION_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    TrackingLin,
    TrackingAng,
    LinVelZ,
    AngVelXy,
    Torques,
    DofVel,
    DofAcc,
    Collision,
    ActionRate,
    Jump,
    FeetSlip,
    Smooth1,
    Smooth2,
    FeetImpact,
    Raibert,
    ContactsShapedVel,
}

pub const NUM_TERMS: usize = 16;

impl Term {
    pub const ALL: [Term; NUM_TERMS] = [
        Term::TrackingLin,
        Term::TrackingAng,
        Term::LinVelZ,
        Term::AngVelXy,
        Term::Torques,
        Term::DofVel,
        Term::DofAcc,
        Term::Collision,
        Term::ActionRate,
        Term::Jump,
        Term::FeetSlip,
        Term::Smooth1,
        Term::Smooth2,
        Term::FeetImpact,
        Term::Raibert,
        Term::ContactsShapedVel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::TrackingLin => "tracking_lin",
            Term::TrackingAng => "tracking_ang",
            Term::LinVelZ => "lin_vel_z",
            Term::AngVelXy => "ang_vel_xy",
            Term::Torques => "torques",
            Term::DofVel => "dof_vel",
            Term::DofAcc => "dof_acc",
            Term::Collision => "collision",
            Term::ActionRate => "action_rate",
            Term::Jump => "jump",
            Term::FeetSlip => "feet_slip",
            Term::Smooth1 => "smooth1",
            Term::Smooth2 => "smooth2",
            Term::FeetImpact => "feet_impact",
            Term::Raibert => "raibert",
            Term::ContactsShapedVel => "contacts_shaped_vel",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub tracking_lin: f64,
    pub tracking_ang: f64,
    pub lin_vel_z: f64,
    pub ang_vel_xy: f64,
    pub torques: f64,
    pub dof_vel: f64,
    pub dof_acc: f64,
    pub collision: f64,
    pub action_rate: f64,
    pub jump: f64,
    pub feet_slip: f64,
    pub smooth1: f64,
    pub smooth2: f64,
    pub feet_impact: f64,
    pub raibert: f64,
    pub contacts_shaped_vel: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            tracking_lin: 1.0,
            tracking_ang: 0.5,
            lin_vel_z: -2e-2,
            ang_vel_xy: -1e-3,
            torques: -1e-5,
            dof_vel: -1e-4,
            dof_acc: -2.5e-7,
            collision: -5.0,
            action_rate: -1e-2,
            jump: 10.0,
            feet_slip: -4e-2,
            smooth1: -0.1,
            smooth2: -0.1,
            feet_impact: -0.0,
            raibert: -10.0,
            contacts_shaped_vel: 4.0,
        }
    }
}

impl RewardWeights {
    pub fn get(&self, term: Term) -> f64 {
        match term {
            Term::TrackingLin => self.tracking_lin,
            Term::TrackingAng => self.tracking_ang,
            Term::LinVelZ => self.lin_vel_z,
            Term::AngVelXy => self.ang_vel_xy,
            Term::Torques => self.torques,
            Term::DofVel => self.dof_vel,
            Term::DofAcc => self.dof_acc,
            Term::Collision => self.collision,
            Term::ActionRate => self.action_rate,
            Term::Jump => self.jump,
            Term::FeetSlip => self.feet_slip,
            Term::Smooth1 => self.smooth1,
            Term::Smooth2 => self.smooth2,
            Term::FeetImpact => self.feet_impact,
            Term::Raibert => self.raibert,
            Term::ContactsShapedVel => self.contacts_shaped_vel,
        }
    }
}

/// Widths of the exponential kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSigmas {
    pub tracking: f64,
    pub yaw: f64,
    pub gait_vel: f64,
}

impl Default for RewardSigmas {
    fn default() -> Self {
        Self {
            tracking: 0.25,
            yaw: 0.25,
            gait_vel: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTerms {
    pub values: [f64; NUM_TERMS],
    pub total: f64,
}

impl RewardTerms {
    pub fn get(&self, term: Term) -> f64 {
        self.values[term.index()]
    }

    /// Build from a name -> value map; every term must be present.
    pub fn from_map(map: &BTreeMap<String, f64>, weights: &RewardWeights) -> Result<Self> {
        let mut values = [0.0; NUM_TERMS];
        for t in Term::ALL {
            values[t.index()] = *map
                .get(t.name())
                .ok_or_else(|| MasqError::Config(format!("missing reward term {}", t.name())))?;
        }
        let mut terms = RewardTerms { values, total: 0.0 };
        terms.total = total_reward(&terms, weights);
        Ok(terms)
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        Term::ALL
            .iter()
            .map(|t| (t.name().to_string(), self.get(*t)))
            .collect()
    }
}

/// Weighted sum of the unweighted terms.
pub fn total_reward(terms: &RewardTerms, w: &RewardWeights) -> f64 {
    Term::ALL.iter().map(|&t| w.get(t) * terms.get(t)).sum()
}

/// How the weighted terms become the scalar training reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardCombine {
    /// Plain weighted sum.
    Sum,
    /// `P * exp(N / sigma_neg)` with `P` the sum of the positive weighted
    /// contributions and `N` the sum of the negative ones. The result is
    /// never negative, so ending an episode early never pays.
    PositiveExp { sigma_neg: f64 },
}

impl Default for RewardCombine {
    fn default() -> Self {
        RewardCombine::PositiveExp { sigma_neg: 5.0 }
    }
}

impl RewardCombine {
    pub fn validate(&self) -> Result<()> {
        match self {
            RewardCombine::Sum => Ok(()),
            RewardCombine::PositiveExp { sigma_neg }
                if *sigma_neg > 0.0 && sigma_neg.is_finite() =>
            {
                Ok(())
            }
            RewardCombine::PositiveExp { .. } => {
                Err(MasqError::Config("sigma_neg must be positive".into()))
            }
        }
    }

    pub fn apply(&self, terms: &RewardTerms, w: &RewardWeights) -> f64 {
        match *self {
            RewardCombine::Sum => total_reward(terms, w),
            RewardCombine::PositiveExp { sigma_neg } => {
                let (mut pos, mut neg) = (0.0, 0.0);
                for t in Term::ALL {
                    let c = w.get(t) * terms.get(t);
                    if c > 0.0 {
                        pos += c;
                    } else {
                        neg += c;
                    }
                }
                pos * (neg / sigma_neg).exp()
            }
        }
    }
}

/// Everything one reward evaluation looks at.
#[derive(Debug, Clone, Copy)]
pub struct RewardInputs<'a> {
    pub state: &'a RobotState,
    pub prev_state: &'a RobotState,
    pub action: &'a [f64; NUM_JOINTS],
    pub action_prev: &'a [f64; NUM_JOINTS],
    pub action_prev2: &'a [f64; NUM_JOINTS],
    pub command: &'a Command,
    pub gait: &'a GaitSpec,
    pub terrain: &'a Terrain,
    pub morph: &'a Morphology,
    /// Control period in seconds.
    pub dt: f64,
}

fn sq(x: f64) -> f64 {
    x * x
}

pub fn foot_in_contact(state: &RobotState, leg: usize) -> bool {
    state.foot_forces[leg].z > CONTACT_THRESHOLD
}

/// Per-foot Raibert footstep error in the yaw-aligned body frame.
pub fn raibert_errors(
    state: &RobotState,
    command: &Command,
    morph: &Morphology,
) -> [Vector2<f64>; NUM_LEGS] {
    let (_, _, yaw) = state.euler();
    let yaw_rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
    let feet = foot_positions(&state.q, morph, &state.pose());
    let shift = 0.5 * command.stance_duration();
    std::array::from_fn(|leg| {
        let rel = yaw_rot.inverse() * (feet[leg] - state.position);
        let hip = morph.hip_offsets[leg];
        let des = Vector2::new(hip[0] + shift * command.vx(), hip[1] + shift * command.vy());
        Vector2::new(rel.x, rel.y) - des
    })
}

pub fn compute_reward(
    inp: &RewardInputs<'_>,
    sigmas: &RewardSigmas,
    weights: &RewardWeights,
) -> Result<RewardTerms> {
    if !(inp.dt > 0.0) {
        return Err(MasqError::Config("reward dt must be positive".into()));
    }
    let s = inp.state;
    let c = inp.command;
    let mut v = [0.0; NUM_TERMS];
    let mut set = |t: Term, x: f64| v[t.index()] = x;

    let lin_err = sq(c.vx() - s.lin_vel.x) + sq(c.vy() - s.lin_vel.y);
    set(Term::TrackingLin, (-lin_err / sigmas.tracking).exp());
    set(
        Term::TrackingAng,
        (-sq(c.yaw_rate() - s.ang_vel.z) / sigmas.yaw).exp(),
    );
    set(Term::LinVelZ, sq(s.lin_vel.z));
    set(Term::AngVelXy, sq(s.ang_vel.x) + sq(s.ang_vel.y));
    set(Term::Torques, s.applied_torques.iter().map(|t| t * t).sum());
    set(Term::DofVel, s.qdot.iter().map(|q| q * q).sum());
    set(
        Term::DofAcc,
        s.qdot
            .iter()
            .zip(&inp.prev_state.qdot)
            .map(|(a, b)| sq((a - b) / inp.dt))
            .sum(),
    );
    set(
        Term::Collision,
        s.hip_forces
            .iter()
            .filter(|f| f.norm() > COLLISION_THRESHOLD)
            .count() as f64,
    );
    let rate: f64 = inp
        .action
        .iter()
        .zip(inp.action_prev)
        .map(|(a, b)| sq(a - b))
        .sum();
    set(Term::ActionRate, rate);
    set(
        Term::Jump,
        -sq(s.height_above(inp.terrain) - c.body_height()),
    );

    let tangential = |f: &Vector3<f64>| sq(f.x) + sq(f.y);
    let mut slip = 0.0;
    let mut impact = 0.0;
    for leg in 0..NUM_LEGS {
        if foot_in_contact(s, leg) {
            slip += tangential(&s.foot_vels[leg]);
            impact += inp.prev_state.foot_vels[leg].norm_squared();
        }
    }
    set(Term::FeetSlip, slip);
    set(Term::Smooth1, rate);
    set(
        Term::Smooth2,
        (0..NUM_JOINTS)
            .map(|j| sq(inp.action[j] - 2.0 * inp.action_prev[j] + inp.action_prev2[j]))
            .sum(),
    );
    set(Term::FeetImpact, impact);

    let d = directors(gait_phase(s.time, inp.gait.frequency), inp.gait);
    let errors = raibert_errors(s, c, inp.morph);
    let mut raibert = 0.0;
    let mut shaped = 0.0;
    for leg in 0..NUM_LEGS {
        if d[leg] > 0.0 {
            raibert += errors[leg].norm_squared();
            shaped += 1.0 - (-tangential(&s.foot_vels[leg]) / sigmas.gait_vel).exp();
        }
    }
    set(Term::Raibert, raibert);
    // Each stance foot contributes a slip factor in [0, 1); the term is its
    // negated sum so the positive weight pays for quiet stance feet.
    set(Term::ContactsShapedVel, -shaped);

    if let Some(t) = Term::ALL.iter().find(|t| !v[t.index()].is_finite()) {
        return Err(MasqError::SimulationFault(format!(
            "reward term {} is not finite",
            t.name()
        )));
    }
    let mut terms = RewardTerms {
        values: v,
        total: 0.0,
    };
    terms.total = total_reward(&terms, weights);
    Ok(terms)
}
