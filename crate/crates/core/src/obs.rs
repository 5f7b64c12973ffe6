//! Per-leg actor observations, the global critic observation and the gait
//! timing signals that tie the legs together.
//!
//! Per-agent actor layout (35):
//!
//! | offset | len | field |
//! |-------:|----:|-------|
//! | 0  | 3  | joint positions of the leg |
//! | 3  | 3  | joint velocities of the leg |
//! | 6  | 3  | leg action before the latest |
//! | 9  | 3  | latest leg action |
//! | 12 | 1  | temporal director of the leg |
//! | 13 | 3  | projected gravity |
//! | 16 | 15 | command |
//! | 31 | 3  | body linear velocity |
//! | 34 | 1  | agent id `n / 4` |
//!
//! Critic layout (73): `q[12] qdot[12] a_prev[12] a[12] d[4] g[3] cmd[15] v_b[3]`.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::env::{RobotState, LEG_NAMES, NUM_JOINTS, NUM_LEGS};
use crate::error::{MasqError, Result};

pub const NUM_AGENTS: usize = NUM_LEGS;
pub const ACTOR_OBS_DIM: usize = 35;
pub const ACTOR_OBS_CONCAT_DIM: usize = ACTOR_OBS_DIM * NUM_AGENTS;
pub const CRITIC_OBS_DIM: usize = 73;
pub const LEG_ACTION_DIM: usize = 3;
pub const ACTION_DIM: usize = NUM_JOINTS;
pub const CRITIC_HEADS: usize = NUM_AGENTS;
pub const CMD_DIM: usize = 15;

/// Named slots of the 15-dimensional command vector.
pub mod cmd {
    pub const VX: usize = 0;
    pub const VY: usize = 1;
    pub const YAW_RATE: usize = 2;
    pub const BODY_HEIGHT: usize = 3;
    pub const STEP_FREQUENCY: usize = 4;
    /// Phase offset of FR relative to FL.
    pub const PHASE: usize = 5;
    /// Phase offset of RL relative to FL.
    pub const OFFSET: usize = 6;
    /// Phase offset of RR relative to FL.
    pub const BOUND: usize = 7;
    /// Stance time in seconds.
    pub const STANCE_DURATION: usize = 8;
    pub const FOOTSWING_HEIGHT: usize = 9;
    pub const PITCH: usize = 10;
    pub const ROLL: usize = 11;
    pub const STANCE_WIDTH: usize = 12;
    pub const STANCE_LENGTH: usize = 13;
    pub const AUX: usize = 14;

    pub const NAMES: [&str; super::CMD_DIM] = [
        "vx",
        "vy",
        "yaw_rate",
        "body_height",
        "step_frequency",
        "phase",
        "offset",
        "bound",
        "stance_duration",
        "footswing_height",
        "pitch",
        "roll",
        "stance_width",
        "stance_length",
        "aux",
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gait {
    Pace,
    Trot,
    Bound,
    Pronk,
}

impl Gait {
    pub const ALL: [Gait; 4] = [Gait::Pace, Gait::Trot, Gait::Bound, Gait::Pronk];

    /// Canonical phase offsets for `(FL, FR, RL, RR)`.
    pub fn phase_offsets(self) -> [f64; NUM_LEGS] {
        match self {
            Gait::Trot => [0.0, 0.5, 0.5, 0.0],
            Gait::Pace => [0.0, 0.5, 0.0, 0.5],
            Gait::Bound => [0.0, 0.0, 0.5, 0.5],
            Gait::Pronk => [0.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Gait::Pace => "pace",
            Gait::Trot => "trot",
            Gait::Bound => "bound",
            Gait::Pronk => "pronk",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Gait::Pace => 0,
            Gait::Trot => 1,
            Gait::Bound => 2,
            Gait::Pronk => 3,
        }
    }

    pub fn parse(s: &str) -> Option<Gait> {
        Gait::ALL.into_iter().find(|g| g.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitSpec {
    pub gait: Gait,
    pub phase_offsets: [f64; NUM_LEGS],
    pub time_offsets: [f64; NUM_LEGS],
    pub frequency: f64,
}

impl GaitSpec {
    pub fn canonical(gait: Gait, frequency: f64) -> Self {
        Self {
            gait,
            phase_offsets: gait.phase_offsets(),
            time_offsets: [0.0; NUM_LEGS],
            frequency,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(MasqError::Config("gait frequency must be positive".into()));
        }
        if self.phase_offsets.iter().any(|o| !(0.0..1.0).contains(o)) {
            return Err(MasqError::Config(
                "gait phase offsets must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Command(pub [f64; CMD_DIM]);

impl Command {
    pub fn vx(&self) -> f64 {
        self.0[cmd::VX]
    }
    pub fn vy(&self) -> f64 {
        self.0[cmd::VY]
    }
    pub fn yaw_rate(&self) -> f64 {
        self.0[cmd::YAW_RATE]
    }
    pub fn body_height(&self) -> f64 {
        self.0[cmd::BODY_HEIGHT]
    }
    pub fn step_frequency(&self) -> f64 {
        self.0[cmd::STEP_FREQUENCY]
    }
    pub fn stance_duration(&self) -> f64 {
        self.0[cmd::STANCE_DURATION]
    }
}

/// Gait clock `(t * frequency) mod 1`.
pub fn gait_phase(t: f64, frequency: f64) -> f64 {
    let g = (t * frequency).rem_euclid(1.0);
    if g >= 1.0 {
        0.0
    } else {
        g
    }
}

/// `sin(2 pi (G + phi_i + delta_i))` for one leg.
pub fn temporal_director(g: f64, gait: &GaitSpec, leg: usize) -> f64 {
    let f = (g + gait.phase_offsets[leg] + gait.time_offsets[leg]).rem_euclid(1.0);
    (TAU * f).sin()
}

pub fn directors(g: f64, gait: &GaitSpec) -> [f64; NUM_LEGS] {
    std::array::from_fn(|leg| temporal_director(g, gait, leg))
}

/// Gravity direction expressed in the body frame.
pub fn projected_gravity(state: &RobotState) -> Vector3<f64> {
    state.orientation.inverse() * Vector3::new(0.0, 0.0, -1.0)
}

pub fn agent_id(agent: usize) -> f64 {
    agent as f64 / NUM_AGENTS as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorObs {
    pub agents: [[f64; ACTOR_OBS_DIM]; NUM_AGENTS],
}

impl ActorObs {
    pub fn concat(&self) -> [f64; ACTOR_OBS_CONCAT_DIM] {
        let mut out = [0.0; ACTOR_OBS_CONCAT_DIM];
        for (n, a) in self.agents.iter().enumerate() {
            out[n * ACTOR_OBS_DIM..(n + 1) * ACTOR_OBS_DIM].copy_from_slice(a);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticObs(pub [f64; CRITIC_OBS_DIM]);

pub mod actor_layout {
    pub const Q: usize = 0;
    pub const QDOT: usize = 3;
    pub const A_PREV: usize = 6;
    pub const A_CURR: usize = 9;
    pub const DIRECTOR: usize = 12;
    pub const GRAVITY: usize = 13;
    pub const CMD: usize = 16;
    pub const VEL: usize = 31;
    pub const ID: usize = 34;
}

pub mod critic_layout {
    pub const Q: usize = 0;
    pub const QDOT: usize = 12;
    pub const A_PREV: usize = 24;
    pub const A_CURR: usize = 36;
    pub const DIRECTORS: usize = 48;
    pub const GRAVITY: usize = 52;
    pub const CMD: usize = 55;
    pub const VEL: usize = 70;
}

pub fn build_actor_obs(
    state: &RobotState,
    command: &Command,
    gait: &GaitSpec,
    a_prev: &[f64; ACTION_DIM],
    a_curr: &[f64; ACTION_DIM],
) -> ActorObs {
    use actor_layout as L;
    let g = gait_phase(state.time, gait.frequency);
    let grav = projected_gravity(state);
    let agents = std::array::from_fn(|n| {
        let mut o = [0.0; ACTOR_OBS_DIM];
        let leg = 3 * n..3 * n + 3;
        o[L::Q..L::Q + 3].copy_from_slice(&state.q[leg.clone()]);
        o[L::QDOT..L::QDOT + 3].copy_from_slice(&state.qdot[leg.clone()]);
        o[L::A_PREV..L::A_PREV + 3].copy_from_slice(&a_prev[leg.clone()]);
        o[L::A_CURR..L::A_CURR + 3].copy_from_slice(&a_curr[leg]);
        o[L::DIRECTOR] = temporal_director(g, gait, n);
        o[L::GRAVITY..L::GRAVITY + 3].copy_from_slice(grav.as_slice());
        o[L::CMD..L::CMD + CMD_DIM].copy_from_slice(&command.0);
        o[L::VEL..L::VEL + 3].copy_from_slice(state.lin_vel.as_slice());
        o[L::ID] = agent_id(n);
        o
    });
    ActorObs { agents }
}

pub fn build_critic_obs(
    state: &RobotState,
    command: &Command,
    gait: &GaitSpec,
    a_prev: &[f64; ACTION_DIM],
    a_curr: &[f64; ACTION_DIM],
) -> CriticObs {
    use critic_layout as L;
    let mut o = [0.0; CRITIC_OBS_DIM];
    o[L::Q..L::Q + 12].copy_from_slice(&state.q);
    o[L::QDOT..L::QDOT + 12].copy_from_slice(&state.qdot);
    o[L::A_PREV..L::A_PREV + 12].copy_from_slice(a_prev);
    o[L::A_CURR..L::A_CURR + 12].copy_from_slice(a_curr);
    let g = gait_phase(state.time, gait.frequency);
    o[L::DIRECTORS..L::DIRECTORS + 4].copy_from_slice(&directors(g, gait));
    o[L::GRAVITY..L::GRAVITY + 3].copy_from_slice(projected_gravity(state).as_slice());
    o[L::CMD..L::CMD + CMD_DIM].copy_from_slice(&command.0);
    o[L::VEL..L::VEL + 3].copy_from_slice(state.lin_vel.as_slice());
    CriticObs(o)
}

/// One named block of an observation vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Machine-readable description of every observation layout, written at
/// the start of a run so logged observations can be decoded later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsManifest {
    pub leg_order: Vec<String>,
    pub joint_order: Vec<String>,
    pub command_fields: Vec<String>,
    pub agent_ids: Vec<f64>,
    pub actor_per_agent_dim: usize,
    pub actor_concat_dim: usize,
    pub actor_fields: Vec<FieldSpec>,
    pub critic_dim: usize,
    pub critic_fields: Vec<FieldSpec>,
    pub action_dim: usize,
    pub critic_heads: usize,
}

pub fn obs_manifest() -> ObsManifest {
    let f = |name: &str, offset: usize, len: usize| FieldSpec {
        name: name.to_string(),
        offset,
        len,
    };
    use actor_layout as A;
    use critic_layout as C;
    ObsManifest {
        leg_order: LEG_NAMES.iter().map(|s| s.to_string()).collect(),
        joint_order: vec!["abduction".into(), "hip".into(), "knee".into()],
        command_fields: cmd::NAMES.iter().map(|s| s.to_string()).collect(),
        agent_ids: (0..NUM_AGENTS).map(agent_id).collect(),
        actor_per_agent_dim: ACTOR_OBS_DIM,
        actor_concat_dim: ACTOR_OBS_CONCAT_DIM,
        actor_fields: vec![
            f("q", A::Q, 3),
            f("qdot", A::QDOT, 3),
            f("action_prev", A::A_PREV, 3),
            f("action", A::A_CURR, 3),
            f("director", A::DIRECTOR, 1),
            f("projected_gravity", A::GRAVITY, 3),
            f("command", A::CMD, CMD_DIM),
            f("body_lin_vel", A::VEL, 3),
            f("agent_id", A::ID, 1),
        ],
        critic_dim: CRITIC_OBS_DIM,
        critic_fields: vec![
            f("q", C::Q, 12),
            f("qdot", C::QDOT, 12),
            f("action_prev", C::A_PREV, 12),
            f("action", C::A_CURR, 12),
            f("directors", C::DIRECTORS, 4),
            f("projected_gravity", C::GRAVITY, 3),
            f("command", C::CMD, CMD_DIM),
            f("body_lin_vel", C::VEL, 3),
        ],
        action_dim: ACTION_DIM,
        critic_heads: CRITIC_HEADS,
    }
}

/// Running mean/variance normaliser. The same statistics are applied to the
/// observations of all four agents.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
    pub clip: f64,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 1e-4,
            clip: 5.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merge the statistics of `n` row-major samples.
    pub fn update(&mut self, batch: &[f64], n: usize) {
        let d = self.dim();
        if n == 0 {
            return;
        }
        debug_assert_eq!(batch.len(), n * d);
        let nf = n as f64;
        for k in 0..d {
            let mut m = 0.0;
            for s in 0..n {
                m += batch[s * d + k];
            }
            m /= nf;
            let mut v = 0.0;
            for s in 0..n {
                let e = batch[s * d + k] - m;
                v += e * e;
            }
            v /= nf;
            let total = self.count + nf;
            let delta = m - self.mean[k];
            self.mean[k] += delta * nf / total;
            let m2 = self.var[k] * self.count + v * nf + delta * delta * self.count * nf / total;
            self.var[k] = m2 / total;
        }
        self.count += nf;
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..self.dim() {
            let z = (x[k] - self.mean[k]) / (self.var[k] + 1e-8).sqrt();
            out[k] = z.clamp(-self.clip, self.clip);
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.normalize_into(x, &mut out);
        out
    }
}
