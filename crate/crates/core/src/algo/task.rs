use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::sub_seed;
use crate::env::{
    env_reset, env_step, pd_torque, ActuatorParams, ContactParams, Morphology, Physics, RobotState,
    Terrain, TerrainKind, UnevenParams, NUM_JOINTS,
};
use crate::error::{MasqError, Result};
use crate::obs::{build_actor_obs, build_critic_obs, ActorObs, Command, CriticObs, Gait, GaitSpec};
use crate::reward::{
    compute_reward, RewardCombine, RewardInputs, RewardSigmas, RewardWeights, Term, NUM_TERMS,
};
use crate::schedule::{
    sample_command, CurriculumConfig, CurriculumState, EnvParams, RandEvent, RandSchedule,
    Randomizer,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainConfig {
    pub kind: TerrainKind,
    pub uneven: UnevenParams,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        Self {
            kind: TerrainKind::Flat,
            uneven: UnevenParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerminationConfig {
    /// Body height above the terrain below which the robot has fallen.
    pub min_height: f64,
    /// Roll or pitch magnitude beyond which the robot has fallen, radians.
    pub max_tilt: f64,
    pub max_episode_s: f64,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self {
            min_height: 0.15,
            max_tilt: 1.0,
            max_episode_s: 20.0,
        }
    }
}

/// Everything that defines the locomotion task seen by one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub morphology: Morphology,
    pub contact: ContactParams,
    pub actuator: ActuatorParams,
    pub sim_dt: f64,
    /// Physics steps per policy action.
    pub decimation: usize,
    /// Actions are clipped to `[-action_clip, action_clip]` before PD control.
    pub action_clip: f64,
    pub terrain: TerrainConfig,
    pub termination: TerminationConfig,
    pub reward_weights: RewardWeights,
    pub reward_sigmas: RewardSigmas,
    pub reward_combine: RewardCombine,
    /// Environment `e` trains gait `gaits[e % gaits.len()]`.
    pub gaits: Vec<Gait>,
    pub randomization: RandSchedule,
    pub curriculum: CurriculumConfig,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            morphology: Morphology::default(),
            contact: ContactParams::default(),
            actuator: ActuatorParams::default(),
            sim_dt: 0.005,
            decimation: 4,
            action_clip: 10.0,
            terrain: TerrainConfig::default(),
            termination: TerminationConfig::default(),
            reward_weights: RewardWeights::default(),
            reward_sigmas: RewardSigmas::default(),
            reward_combine: RewardCombine::default(),
            gaits: Gait::ALL.to_vec(),
            randomization: RandSchedule::default(),
            curriculum: CurriculumConfig::default(),
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        self.morphology.validate()?;
        self.randomization.validate()?;
        self.curriculum.validate()?;
        if !(self.sim_dt > 0.0) || self.decimation == 0 {
            return Err(MasqError::Config(
                "sim_dt and decimation must be positive".into(),
            ));
        }
        if self.gaits.is_empty() {
            return Err(MasqError::Config("at least one gait is required".into()));
        }
        if !(self.action_clip > 0.0) {
            return Err(MasqError::Config("action_clip must be positive".into()));
        }
        let c = &self.contact;
        if ![c.k_normal, c.d_normal, c.mu, c.v_slip_reg]
            .iter()
            .all(|v| *v >= 0.0)
        {
            return Err(MasqError::Config("contact parameters must be >= 0".into()));
        }
        self.reward_combine.validate()?;
        let s = &self.reward_sigmas;
        if ![s.tracking, s.yaw, s.gait_vel].iter().all(|v| *v > 0.0) {
            return Err(MasqError::Config("reward sigmas must be positive".into()));
        }
        Ok(())
    }

    pub fn nominal_control_dt(&self) -> f64 {
        self.sim_dt * self.decimation as f64
    }
}

/// Outcome of a finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub env: usize,
    pub gait: Gait,
    pub steps: usize,
    pub total_reward: f64,
    /// Per-step mean of `tracking_lin + tracking_ang`.
    pub mean_tracking: f64,
    pub mean_tracking_lin: f64,
    pub fell: bool,
    pub fault: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    /// Unweighted reward terms (zeros on a simulation fault).
    pub terms: [f64; NUM_TERMS],
    pub done: bool,
    pub finished: Option<EpisodeSummary>,
}

#[derive(Debug, Clone, Default)]
struct EpisodeAccum {
    steps: usize,
    total_reward: f64,
    tracking_lin: f64,
    tracking_ang: f64,
}

/// One simulated robot with its command, gait clock, action history and
/// randomisation state. Each environment owns private noise streams, so its
/// trajectory depends only on `(seed, index)` and the policy.
#[derive(Debug, Clone)]
pub struct LocoEnv {
    pub index: usize,
    pub gait_kind: Gait,
    pub state: RobotState,
    pub prev_state: RobotState,
    pub terrain: Terrain,
    pub command: Command,
    pub gait: GaitSpec,
    /// Latest applied action and the one before it.
    pub a1: [f64; NUM_JOINTS],
    pub a2: [f64; NUM_JOINTS],
    pub params: EnvParams,
    /// Simulated seconds since construction, across episodes.
    pub clock: f64,
    /// When set, every episode uses this command instead of a sampled one.
    pub pinned_command: Option<Command>,
    physics: Physics,
    randomizer: Randomizer,
    rng: ChaCha8Rng,
    episode: EpisodeAccum,
    events: Vec<RandEvent>,
}

impl LocoEnv {
    pub fn new(index: usize, seed: u64, task: &TaskConfig, cs: &CurriculumState) -> Result<Self> {
        let gait_kind = task.gaits[index % task.gaits.len()];
        let rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 1, index as u64));
        let randomizer = Randomizer::new(sub_seed(seed, 2, index as u64), index);
        let morph = task.morphology.clone();
        let mut env = Self {
            index,
            gait_kind,
            state: env_reset(&morph, &Terrain::flat(), 0)?,
            prev_state: env_reset(&morph, &Terrain::flat(), 0)?,
            terrain: Terrain::flat(),
            command: Command([0.0; crate::obs::CMD_DIM]),
            gait: GaitSpec::canonical(gait_kind, 1.0),
            a1: [0.0; NUM_JOINTS],
            a2: [0.0; NUM_JOINTS],
            params: EnvParams::default(),
            clock: 0.0,
            pinned_command: None,
            physics: Physics::new(morph, task.contact),
            randomizer,
            rng,
            episode: EpisodeAccum::default(),
            events: Vec::new(),
        };
        let ev = env
            .randomizer
            .randomize(&mut env.params, &task.randomization, 0.0);
        env.events.extend(ev);
        env.apply_params(task);
        env.reset_episode(task, cs)?;
        Ok(env)
    }

    fn apply_params(&mut self, task: &TaskConfig) {
        let p = &self.params;
        let mut morph = task.morphology.clone();
        morph.body_mass *= p.mass_scale;
        for i in &mut morph.body_inertia {
            *i *= p.mass_scale;
        }
        self.physics = Physics::new(morph, task.contact);
        self.physics.gravity = p.gravity;
        self.physics.tau_lag = task.actuator.tau_lag;
        self.terrain.friction = p.friction;
        self.terrain.restitution = p.restitution;
    }

    /// New command, terrain and robot for the next episode.
    pub fn reset_episode(&mut self, task: &TaskConfig, cs: &CurriculumState) -> Result<()> {
        self.command = match &self.pinned_command {
            Some(c) => *c,
            None => sample_command(cs, self.gait_kind, &mut self.rng),
        };
        self.gait = GaitSpec::canonical(self.gait_kind, self.command.step_frequency());
        self.gait.validate()?;
        self.terrain = match task.terrain.kind {
            TerrainKind::Flat => Terrain::flat(),
            TerrainKind::Uneven => {
                let mut p = task.terrain.uneven;
                if task.randomization.enabled {
                    p.noise_height = self.randomizer.sample_tile_height(&task.randomization);
                }
                Terrain::uneven(&p, &mut self.rng)
            }
        };
        self.terrain.friction = self.params.friction;
        self.terrain.restitution = self.params.restitution;
        self.state = env_reset(&task.morphology, &self.terrain, self.rng.next_u64())?;
        self.prev_state = self.state.clone();
        self.a1 = [0.0; NUM_JOINTS];
        self.a2 = [0.0; NUM_JOINTS];
        self.episode = EpisodeAccum::default();
        Ok(())
    }

    /// Joint angles as the encoders report them, calibration offset included.
    fn measured(&self) -> RobotState {
        let mut s = self.state.clone();
        for (q, c) in s.q.iter_mut().zip(&self.params.calibration) {
            *q += c;
        }
        s
    }

    pub fn observe(&self) -> (ActorObs, CriticObs) {
        let s = self.measured();
        (
            build_actor_obs(&s, &self.command, &self.gait, &self.a2, &self.a1),
            build_critic_obs(&s, &self.command, &self.gait, &self.a2, &self.a1),
        )
    }

    /// Twelve standard-normal draws from the environment's own stream.
    pub fn noise(&mut self) -> [f64; NUM_JOINTS] {
        std::array::from_fn(|_| StandardNormal.sample(&mut self.rng))
    }

    pub fn control_dt(&self, task: &TaskConfig) -> f64 {
        task.sim_dt * self.params.dt_scale * task.decimation as f64
    }

    pub fn take_events(&mut self) -> Vec<RandEvent> {
        std::mem::take(&mut self.events)
    }

    /// Apply one policy action for `decimation` physics steps. A finished
    /// episode is summarised and the environment reset in place.
    pub fn step(
        &mut self,
        action: &[f64; NUM_JOINTS],
        task: &TaskConfig,
        cs: &CurriculumState,
    ) -> Result<StepResult> {
        let clip = task.action_clip;
        let applied = action.map(|a| a.clamp(-clip, clip));
        let dt = task.sim_dt * self.params.dt_scale;
        let control_dt = dt * task.decimation as f64;
        let mut next = Ok(self.state.clone());
        for _ in 0..task.decimation {
            let s = match &next {
                Ok(s) => s,
                Err(_) => break,
            };
            let q_meas: [f64; NUM_JOINTS] =
                std::array::from_fn(|j| s.q[j] + self.params.calibration[j]);
            let tau = pd_torque(
                &applied,
                &q_meas,
                &s.qdot,
                &task.actuator,
                &task.morphology.default_pose,
            )
            .map(|t| t * self.params.motor_strength);
            next = env_step(s, &tau, &self.physics, &self.terrain, dt);
        }
        let outcome = next.and_then(|s| {
            let terms = compute_reward(
                &RewardInputs {
                    state: &s,
                    prev_state: &self.state,
                    action: &applied,
                    action_prev: &self.a1,
                    action_prev2: &self.a2,
                    command: &self.command,
                    gait: &self.gait,
                    terrain: &self.terrain,
                    morph: &task.morphology,
                    dt: control_dt,
                },
                &task.reward_sigmas,
                &task.reward_weights,
            )?;
            Ok((s, terms))
        });

        let (reward, terms, fell, fault) = match outcome {
            Ok((s, terms)) => {
                self.prev_state = std::mem::replace(&mut self.state, s);
                self.a2 = self.a1;
                self.a1 = applied;
                let t = &task.termination;
                let (roll, pitch, _) = self.state.euler();
                let fell = self.state.height_above(&self.terrain) < t.min_height
                    || roll.abs() > t.max_tilt
                    || pitch.abs() > t.max_tilt;
                let reward = task.reward_combine.apply(&terms, &task.reward_weights);
                (reward, terms.values, fell, false)
            }
            Err(MasqError::SimulationFault(_)) => (0.0, [0.0; NUM_TERMS], false, true),
            Err(e) => return Err(e),
        };
        self.episode.steps += 1;
        self.episode.total_reward += reward;
        self.episode.tracking_lin += terms[Term::TrackingLin.index()];
        self.episode.tracking_ang += terms[Term::TrackingAng.index()];
        let timeout = self.state.time >= task.termination.max_episode_s - 1e-9;
        let done = fell || fault || timeout;

        self.clock += control_dt;
        let ev = self
            .randomizer
            .randomize(&mut self.params, &task.randomization, self.clock);
        if !ev.is_empty() {
            self.events.extend(ev);
            self.apply_params(task);
        }

        let finished = if done {
            let n = self.episode.steps as f64;
            let summary = EpisodeSummary {
                env: self.index,
                gait: self.gait_kind,
                steps: self.episode.steps,
                total_reward: self.episode.total_reward,
                mean_tracking: (self.episode.tracking_lin + self.episode.tracking_ang) / n,
                mean_tracking_lin: self.episode.tracking_lin / n,
                fell,
                fault,
            };
            self.reset_episode(task, cs)?;
            Some(summary)
        } else {
            None
        };
        Ok(StepResult {
            reward,
            terms,
            done,
            finished,
        })
    }
}
