//! Command sampling, the per-gait curriculum and the domain-randomization
//! engine.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{GRAVITY, NUM_JOINTS};
use crate::error::{MasqError, Result};
use crate::obs::{cmd, Command, Gait, CMD_DIM};

pub type Range = [f64; 2];

/// Command sampling ranges. Level `k` interpolates from `base` towards
/// `limit` by `min(1, k * widen_step)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommandRanges {
    pub base: [Range; CMD_DIM],
    pub limit: [Range; CMD_DIM],
    pub widen_step: f64,
}

impl Default for CommandRanges {
    fn default() -> Self {
        let mut base = [[0.0, 0.0]; CMD_DIM];
        let mut limit = [[0.0, 0.0]; CMD_DIM];
        let mut set = |i: usize, b: Range, l: Range| {
            base[i] = b;
            limit[i] = l;
        };
        set(cmd::VX, [-1.0, 1.0], [-2.0, 2.0]);
        set(cmd::VY, [-0.3, 0.3], [-0.6, 0.6]);
        set(cmd::YAW_RATE, [-0.5, 0.5], [-1.0, 1.0]);
        set(cmd::BODY_HEIGHT, [0.28, 0.30], [0.25, 0.32]);
        set(cmd::STEP_FREQUENCY, [2.0, 3.0], [1.5, 4.0]);
        set(cmd::STANCE_DURATION, [0.2, 0.25], [0.15, 0.3]);
        set(cmd::FOOTSWING_HEIGHT, [0.06, 0.1], [0.03, 0.15]);
        set(cmd::PITCH, [0.0, 0.0], [-0.2, 0.2]);
        set(cmd::ROLL, [0.0, 0.0], [-0.2, 0.2]);
        set(cmd::STANCE_WIDTH, [0.26, 0.26], [0.2, 0.3]);
        set(cmd::STANCE_LENGTH, [0.38, 0.38], [0.3, 0.45]);
        Self {
            base,
            limit,
            widen_step: 0.25,
        }
    }
}

impl CommandRanges {
    pub fn validate(&self) -> Result<()> {
        if !(self.widen_step > 0.0 && self.widen_step.is_finite()) {
            return Err(MasqError::Config("widen_step must be positive".into()));
        }
        for i in 0..CMD_DIM {
            let [bl, bh] = self.base[i];
            let [ll, lh] = self.limit[i];
            if ![bl, bh, ll, lh].iter().all(|v| v.is_finite()) || bl > bh || ll > bl || bh > lh {
                return Err(MasqError::Config(format!(
                    "command range {} must satisfy limit_lo <= base_lo <= base_hi <= limit_hi",
                    cmd::NAMES[i]
                )));
            }
        }
        Ok(())
    }

    pub fn at_level(&self, level: u32) -> [Range; CMD_DIM] {
        let s = (level as f64 * self.widen_step).min(1.0);
        std::array::from_fn(|i| {
            let [bl, bh] = self.base[i];
            let [ll, lh] = self.limit[i];
            [(1.0 - s) * bl + s * ll, (1.0 - s) * bh + s * lh]
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub ranges: CommandRanges,
    /// EMA smoothing factor.
    pub alpha: f64,
    /// Fraction of the maximum tracking reward needed to advance.
    pub threshold_frac: f64,
    /// Largest attainable per-step value of `tracking_lin + tracking_ang`.
    pub max_tracking: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            ranges: CommandRanges::default(),
            alpha: 0.1,
            threshold_frac: 0.8,
            max_tracking: 2.0,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        self.ranges.validate()?;
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(MasqError::Config(
                "curriculum alpha must be in (0, 1]".into(),
            ));
        }
        if !(self.threshold_frac > 0.0 && self.max_tracking > 0.0) {
            return Err(MasqError::Config(
                "curriculum threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Independent progress per gait, indexed by [`Gait::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub cfg: CurriculumConfig,
    pub levels: [u32; 4],
    pub ema: [f64; 4],
}

impl CurriculumState {
    pub fn new(cfg: CurriculumConfig) -> Self {
        Self {
            cfg,
            levels: [0; 4],
            ema: [0.0; 4],
        }
    }

    pub fn level(&self, gait: Gait) -> u32 {
        self.levels[gait.index()]
    }

    pub fn threshold(&self, _level: u32) -> f64 {
        self.cfg.threshold_frac * self.cfg.max_tracking
    }

    pub fn ranges(&self, gait: Gait) -> [Range; CMD_DIM] {
        self.cfg.ranges.at_level(self.level(gait))
    }
}

/// Uniform draw in every range; the gait's phase offsets overwrite the
/// phase, offset and bound dimensions.
pub fn sample_command<R: Rng + ?Sized>(cs: &CurriculumState, gait: Gait, rng: &mut R) -> Command {
    let ranges = cs.ranges(gait);
    let mut c = [0.0; CMD_DIM];
    for (v, [lo, hi]) in c.iter_mut().zip(ranges) {
        let u: f64 = rng.random();
        *v = lo + u * (hi - lo);
    }
    let phases = gait.phase_offsets();
    c[cmd::PHASE] = phases[1];
    c[cmd::OFFSET] = phases[2];
    c[cmd::BOUND] = phases[3];
    Command(c)
}

/// Fold one finished episode's mean tracking reward into the gait's EMA.
/// Crossing the threshold advances one level and restarts the EMA, so the
/// next level has to be earned on the wider ranges.
pub fn curriculum_step(
    cs: &CurriculumState,
    gait: Gait,
    episode_tracking_reward: f64,
) -> Result<CurriculumState> {
    if !episode_tracking_reward.is_finite() {
        return Err(MasqError::NonFinite("episode tracking reward".into()));
    }
    let mut next = cs.clone();
    let g = gait.index();
    let a = cs.cfg.alpha;
    next.ema[g] = (1.0 - a) * cs.ema[g] + a * episode_tracking_reward;
    if next.ema[g] >= cs.threshold(cs.levels[g]) {
        next.levels[g] += 1;
        next.ema[g] = 0.0;
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandSchedule {
    pub enabled: bool,
    pub gravity_period: f64,
    pub gravity_impulse_duration: f64,
    pub timestep_period: f64,
    pub overall_period: f64,
    /// Maximum tilt of the gravity vector, radians.
    pub gravity_tilt: f64,
    /// Relative gravity magnitude jitter.
    pub gravity_scale: Range,
    pub dt_scale: Range,
    pub mass_scale: Range,
    pub motor_strength: Range,
    pub calibration_offset: Range,
    pub friction: Range,
    pub restitution: Range,
    /// Noise amplitude of uneven-terrain tiles, drawn per regeneration.
    pub tile_height: Range,
}

impl Default for RandSchedule {
    fn default() -> Self {
        Self {
            enabled: true,
            gravity_period: 8.0,
            gravity_impulse_duration: 0.99,
            timestep_period: 6.0,
            overall_period: 4.0,
            gravity_tilt: 5f64.to_radians(),
            gravity_scale: [0.9, 1.1],
            dt_scale: [0.9, 1.1],
            mass_scale: [0.8, 1.2],
            motor_strength: [0.9, 1.1],
            calibration_offset: [-0.02, 0.02],
            friction: [0.4, 1.25],
            restitution: [0.0, 0.4],
            tile_height: [0.0, 0.04],
        }
    }
}

impl RandSchedule {
    pub fn validate(&self) -> Result<()> {
        let periods = [
            self.gravity_period,
            self.gravity_impulse_duration,
            self.timestep_period,
            self.overall_period,
        ];
        if !periods.iter().all(|p| *p > 0.0 && p.is_finite()) {
            return Err(MasqError::Config(
                "randomization periods must be positive".into(),
            ));
        }
        if self.gravity_impulse_duration >= self.gravity_period {
            return Err(MasqError::Config(
                "gravity impulse must be shorter than its period".into(),
            ));
        }
        let ranges = [
            self.gravity_scale,
            self.dt_scale,
            self.mass_scale,
            self.motor_strength,
            self.calibration_offset,
            self.friction,
            self.restitution,
            self.tile_height,
        ];
        if !ranges
            .iter()
            .all(|[lo, hi]| lo.is_finite() && hi.is_finite() && lo <= hi)
            || !(self.gravity_tilt >= 0.0 && self.gravity_tilt.is_finite())
        {
            return Err(MasqError::Config(
                "randomization ranges must be finite, lo <= hi".into(),
            ));
        }
        if self.dt_scale[0] <= 0.0 || self.mass_scale[0] <= 0.0 || self.friction[0] < 0.0 {
            return Err(MasqError::Config("scales must stay positive".into()));
        }
        Ok(())
    }
}

/// The randomized physical parameters of one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvParams {
    pub gravity: Vector3<f64>,
    pub dt_scale: f64,
    pub mass_scale: f64,
    pub motor_strength: f64,
    pub calibration: [f64; NUM_JOINTS],
    pub friction: f64,
    pub restitution: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            gravity: nominal_gravity(),
            dt_scale: 1.0,
            mass_scale: 1.0,
            motor_strength: 1.0,
            calibration: [0.0; NUM_JOINTS],
            friction: 1.0,
            restitution: 0.0,
        }
    }
}

pub fn nominal_gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -GRAVITY)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventGroup {
    Gravity,
    GravityRestore,
    Timestep,
    Overall,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandEvent {
    pub env: usize,
    pub time: f64,
    pub group: EventGroup,
    pub values: Vec<f64>,
}

/// Boundaries closer than this to the current time count as reached.
const TIME_TOL: f64 = 1e-9;

/// Per-environment randomization clock with a private noise stream.
#[derive(Debug, Clone)]
pub struct Randomizer {
    pub env: usize,
    next_gravity: f64,
    next_timestep: f64,
    next_overall: f64,
    restore_at: Option<f64>,
    rng: ChaCha8Rng,
}

impl Randomizer {
    pub fn new(seed: u64, env: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(env as u64 + 1);
        Self {
            env,
            next_gravity: 0.0,
            next_timestep: 0.0,
            next_overall: 0.0,
            restore_at: None,
            rng,
        }
    }

    fn uniform(&mut self, [lo, hi]: Range) -> f64 {
        let u: f64 = self.rng.random();
        lo + u * (hi - lo)
    }

    /// Tile noise amplitude for the next terrain regeneration.
    pub fn sample_tile_height(&mut self, rs: &RandSchedule) -> f64 {
        self.uniform(rs.tile_height)
    }

    /// Fire every group whose boundary has been reached by `sim_time`.
    pub fn randomize(
        &mut self,
        params: &mut EnvParams,
        rs: &RandSchedule,
        sim_time: f64,
    ) -> Vec<RandEvent> {
        let mut events = Vec::new();
        if !rs.enabled {
            return events;
        }
        let reached = |t: f64| sim_time >= t - TIME_TOL;
        if let Some(t) = self.restore_at {
            if reached(t) {
                params.gravity = nominal_gravity();
                self.restore_at = None;
                events.push(self.event(
                    sim_time,
                    EventGroup::GravityRestore,
                    params.gravity.as_slice().to_vec(),
                ));
            }
        }
        if reached(self.next_gravity) {
            let tilt = self.uniform([0.0, rs.gravity_tilt]);
            let heading = self.uniform([0.0, std::f64::consts::TAU]);
            let scale = self.uniform(rs.gravity_scale);
            let axis = Vector3::new(heading.cos(), heading.sin(), 0.0);
            let rot = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), tilt);
            params.gravity = rot * nominal_gravity() * scale;
            self.restore_at = Some(self.next_gravity + rs.gravity_impulse_duration);
            self.next_gravity += rs.gravity_period;
            events.push(self.event(
                sim_time,
                EventGroup::Gravity,
                params.gravity.as_slice().to_vec(),
            ));
        }
        if reached(self.next_timestep) {
            params.dt_scale = self.uniform(rs.dt_scale);
            self.next_timestep += rs.timestep_period;
            events.push(self.event(sim_time, EventGroup::Timestep, vec![params.dt_scale]));
        }
        if reached(self.next_overall) {
            params.mass_scale = self.uniform(rs.mass_scale);
            params.motor_strength = self.uniform(rs.motor_strength);
            for j in 0..NUM_JOINTS {
                params.calibration[j] = self.uniform(rs.calibration_offset);
            }
            params.friction = self.uniform(rs.friction);
            params.restitution = self.uniform(rs.restitution);
            self.next_overall += rs.overall_period;
            let mut values = vec![params.mass_scale, params.motor_strength];
            values.extend_from_slice(&params.calibration);
            values.push(params.friction);
            values.push(params.restitution);
            events.push(self.event(sim_time, EventGroup::Overall, values));
        }
        events
    }

    fn event(&self, time: f64, group: EventGroup, values: Vec<f64>) -> RandEvent {
        RandEvent {
            env: self.env,
            time,
            group,
            values,
        }
    }
}

/// Whether every randomized parameter lies inside its declared range.
pub fn params_in_range(p: &EnvParams, rs: &RandSchedule) -> bool {
    let within = |v: f64, [lo, hi]: Range| v >= lo && v <= hi;
    let g = p.gravity.norm() / GRAVITY;
    let tilt = (-p.gravity.z / p.gravity.norm()).clamp(-1.0, 1.0).acos();
    let g_ok = p.gravity == nominal_gravity()
        || (within(
            g,
            [rs.gravity_scale[0] - 1e-12, rs.gravity_scale[1] + 1e-12],
        ) && tilt <= rs.gravity_tilt + 1e-12);
    g_ok && (p.dt_scale == 1.0 || within(p.dt_scale, rs.dt_scale))
        && (p.mass_scale == 1.0 || within(p.mass_scale, rs.mass_scale))
        && (p.motor_strength == 1.0 || within(p.motor_strength, rs.motor_strength))
        && p.calibration
            .iter()
            .all(|&c| within(c, rs.calibration_offset))
        && (p.friction == 1.0 || within(p.friction, rs.friction))
        && within(p.restitution, rs.restitution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn count(events: &[RandEvent], g: EventGroup) -> usize {
        events.iter().filter(|e| e.group == g).count()
    }

    fn run(seed: u64, horizon: f64, dt: f64) -> Vec<RandEvent> {
        let rs = RandSchedule::default();
        let mut r = Randomizer::new(seed, 0);
        let mut p = EnvParams::default();
        let mut out = Vec::new();
        let steps = (horizon / dt).round() as usize;
        for k in 0..steps {
            out.extend(r.randomize(&mut p, &rs, k as f64 * dt));
            assert!(params_in_range(&p, &rs));
        }
        out
    }

    #[test]
    fn cadence_over_48_seconds() {
        let ev = run(3, 48.0, 0.02);
        assert_eq!(count(&ev, EventGroup::Gravity), 6);
        assert_eq!(count(&ev, EventGroup::Timestep), 8);
        assert_eq!(count(&ev, EventGroup::Overall), 12);
        assert_eq!(count(&ev, EventGroup::GravityRestore), 6);
    }

    #[test]
    fn gravity_fires_at_eight_and_restores_at_899() {
        let rs = RandSchedule::default();
        let mut r = Randomizer::new(0, 0);
        let mut p = EnvParams::default();
        r.randomize(&mut p, &rs, 0.0);
        r.randomize(&mut p, &rs, 0.99);
        assert_eq!(p.gravity, nominal_gravity());
        let ev = r.randomize(&mut p, &rs, 7.9);
        assert_eq!(count(&ev, EventGroup::Gravity), 0);
        let ev = r.randomize(&mut p, &rs, 8.0);
        assert_eq!(count(&ev, EventGroup::Gravity), 1);
        let ev = r.randomize(&mut p, &rs, 8.98);
        assert_eq!(count(&ev, EventGroup::GravityRestore), 0);
        let ev = r.randomize(&mut p, &rs, 8.99);
        assert_eq!(count(&ev, EventGroup::GravityRestore), 1);
        assert_eq!(p.gravity, nominal_gravity());
    }

    #[test]
    fn event_log_is_deterministic() {
        assert_eq!(run(11, 20.0, 0.02), run(11, 20.0, 0.02));
        assert_ne!(run(11, 20.0, 0.02), run(12, 20.0, 0.02));
    }

    #[test]
    fn disabled_schedule_is_silent() {
        let rs = RandSchedule {
            enabled: false,
            ..RandSchedule::default()
        };
        let mut r = Randomizer::new(0, 0);
        let mut p = EnvParams::default();
        assert!(r.randomize(&mut p, &rs, 0.0).is_empty());
        assert_eq!(p, EnvParams::default());
    }

    #[test]
    fn degenerate_range_is_constant() {
        let mut cfg = CurriculumConfig::default();
        cfg.ranges.base[cmd::VY] = [0.0, 0.0];
        let cs = CurriculumState::new(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_command(&cs, Gait::Trot, &mut rng).vy(), 0.0);
        }
    }

    #[test]
    fn uniform_mean_and_gait_offsets() {
        let cs = CurriculumState::new(CurriculumConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let c = sample_command(&cs, Gait::Bound, &mut rng);
            assert!((-1.0..=1.0).contains(&c.vx()));
            assert_eq!(&c.0[cmd::PHASE..=cmd::BOUND], &[0.0, 0.5, 0.5]);
            sum += c.vx();
        }
        assert!((sum / n as f64).abs() < 0.05);
    }

    #[test]
    fn command_sequence_is_deterministic() {
        let cs = CurriculumState::new(CurriculumConfig::default());
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| sample_command(&cs, Gait::Pace, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn below_threshold_only_moves_ema() {
        let cs = CurriculumState::new(CurriculumConfig::default());
        let next = curriculum_step(&cs, Gait::Trot, 1.0).unwrap();
        assert_eq!(next.levels, cs.levels);
        assert!((next.ema[Gait::Trot.index()] - 0.1).abs() < 1e-15);
        assert!(curriculum_step(&cs, Gait::Trot, f64::NAN).is_err());
    }

    /// Straight recurrence: count episodes of perfect tracking until `target`
    /// levels are reached.
    fn episodes_to_level(target: u32) -> usize {
        let (alpha, thr, max) = (0.1, 0.8 * 2.0, 2.0);
        let (mut ema, mut level, mut n) = (0.0f64, 0u32, 0usize);
        while level < target {
            ema = ema * (1.0 - alpha) + alpha * max;
            n += 1;
            if ema >= thr {
                level += 1;
                ema = 0.0;
            }
        }
        n
    }

    #[test]
    fn perfect_tracking_level_schedule() {
        let first = ((1.0f64 - 0.8).ln() / 0.9f64.ln()).ceil() as usize;
        assert_eq!(first, 16);
        for target in 1..=4u32 {
            let mut cs = CurriculumState::new(CurriculumConfig::default());
            let mut n = 0;
            while cs.level(Gait::Pronk) < target {
                let next = curriculum_step(&cs, Gait::Pronk, 2.0).unwrap();
                assert!(next.level(Gait::Pronk) <= cs.level(Gait::Pronk) + 1);
                cs = next;
                n += 1;
            }
            assert_eq!(n, episodes_to_level(target));
            assert_eq!(n, first * target as usize);
            assert_eq!(cs.level(Gait::Trot), 0);
        }
    }

    #[test]
    fn level_zero_is_strict_subset() {
        let r = CommandRanges::default();
        r.validate().unwrap();
        let l0 = r.at_level(0);
        for k in 1..10 {
            let lk = r.at_level(k);
            let mut strict = false;
            for i in 0..CMD_DIM {
                assert!(lk[i][0] <= l0[i][0] && l0[i][1] <= lk[i][1]);
                strict |= lk[i][0] < l0[i][0] || l0[i][1] < lk[i][1];
            }
            assert!(strict);
        }
    }

    proptest! {
        #[test]
        fn levels_never_decrease(rewards in proptest::collection::vec(0.0f64..2.0, 1..200)) {
            let mut cs = CurriculumState::new(CurriculumConfig::default());
            for r in rewards {
                let next = curriculum_step(&cs, Gait::Trot, r).unwrap();
                prop_assert!(next.levels[1] >= cs.levels[1]);
                cs = next;
            }
        }

        #[test]
        fn params_stay_in_range(seed in 0u64..1000, dt in 0.005f64..0.05) {
            let rs = RandSchedule::default();
            let mut r = Randomizer::new(seed, 2);
            let mut p = EnvParams::default();
            let mut t = 0.0;
            while t < 30.0 {
                r.randomize(&mut p, &rs, t);
                prop_assert!(params_in_range(&p, &rs));
                t += dt;
            }
        }
    }
}
