//! Deterministic evaluation of a trained policy: contact-force traces per
//! gait, push recovery, and tracking per terrain.
//!
//! Evaluation runs use the mean action, randomisation off and a pinned
//! command (the midpoint of the checkpoint's current command ranges), so a
//! checkpoint always produces the same files.

use std::io::Write;

use nalgebra::Vector3;
use serde::Serialize;

use crate::algo::LocoEnv;
use crate::checkpoint::Checkpoint;
use crate::env::{apply_push, Terrain, TerrainKind, LEG_NAMES, NUM_LEGS};
use crate::error::{MasqError, Result};
use crate::obs::{cmd, directors, gait_phase, Command, Gait, CMD_DIM};
use crate::reward::{foot_in_contact, Term};
use crate::schedule::CurriculumState;

/// Correlation a post-push cycle needs to count as recovered.
pub const RECOVERY_CORRELATION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalOptions {
    /// Seconds run before recording starts.
    pub warmup_s: f64,
    /// Recorded seconds for gait traces.
    pub trace_s: f64,
    /// Gait cycles compared after a push.
    pub push_cycles: usize,
    /// Seconds per terrain and gait in the terrain report.
    pub terrain_s: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            warmup_s: 2.0,
            trace_s: 4.0,
            push_cycles: 12,
            terrain_s: 10.0,
        }
    }
}

/// Midpoint of every current range, with the gait's phase offsets.
pub fn eval_command(cs: &CurriculumState, gait: Gait) -> Command {
    let ranges = cs.ranges(gait);
    let mut c: [f64; CMD_DIM] = std::array::from_fn(|i| 0.5 * (ranges[i][0] + ranges[i][1]));
    let ph = gait.phase_offsets();
    c[cmd::PHASE] = ph[1];
    c[cmd::OFFSET] = ph[2];
    c[cmd::BOUND] = ph[3];
    Command(c)
}

/// A deterministic evaluation episode on one gait and terrain.
struct EvalRun<'a> {
    ckpt: &'a Checkpoint,
    task: crate::algo::TaskConfig,
    env: LocoEnv,
}

impl<'a> EvalRun<'a> {
    fn new(ckpt: &'a Checkpoint, gait: Gait, terrain: TerrainKind) -> Result<Self> {
        let mut task = ckpt.config.task.clone();
        task.randomization.enabled = false;
        task.gaits = vec![gait];
        task.terrain.kind = terrain;
        let mut env = LocoEnv::new(0, ckpt.config.seed, &task, &ckpt.curriculum)?;
        env.pinned_command = Some(eval_command(&ckpt.curriculum, gait));
        env.reset_episode(&task, &ckpt.curriculum)?;
        Ok(Self { ckpt, task, env })
    }

    fn dt(&self) -> f64 {
        self.env.control_dt(&self.task)
    }

    fn steps_for(&self, seconds: f64) -> usize {
        (seconds / self.dt()).round() as usize
    }

    /// Gait cycle length in control steps.
    fn cycle_steps(&self) -> f64 {
        1.0 / (self.env.gait.frequency * self.dt())
    }

    fn step(&mut self) -> Result<crate::algo::StepResult> {
        let (obs, _) = self.env.observe();
        let action = self.ckpt.policy.act_deterministic(&obs)?;
        self.env.step(&action, &self.task, &self.ckpt.curriculum)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub time: f64,
    pub phase: f64,
    /// Vertical ground reaction per foot, N.
    pub force: [f64; NUM_LEGS],
    pub contact: [bool; NUM_LEGS],
    pub director: [f64; NUM_LEGS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitTrace {
    pub gait: Gait,
    pub dt: f64,
    pub frequency: f64,
    pub rows: Vec<TraceRow>,
    /// An episode ended (fall or fault) while recording.
    pub interrupted: bool,
}

impl GaitTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string(), "phase".to_string()];
        for prefix in ["force", "contact", "director"] {
            header.extend(LEG_NAMES.iter().map(|l| format!("{prefix}_{l}")));
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.time.to_string(), r.phase.to_string()];
            rec.extend(r.force.iter().map(|v| v.to_string()));
            rec.extend(r.contact.iter().map(|&c| (c as u8).to_string()));
            rec.extend(r.director.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| MasqError::io("gait trace", e))?;
        Ok(())
    }

    pub fn force_series(&self, leg: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.force[leg]).collect()
    }

    /// Largest phase lag between any two feet, as a fraction of the cycle.
    pub fn max_pairwise_phase_lag(&self) -> f64 {
        let period = 1.0 / (self.frequency * self.dt);
        let mut worst: f64 = 0.0;
        for a in 0..NUM_LEGS {
            for b in a + 1..NUM_LEGS {
                let lag = phase_lag(&self.force_series(a), &self.force_series(b), period);
                worst = worst.max(lag);
            }
        }
        worst
    }
}

/// Record per-foot contact forces for one gait after a warm-up.
pub fn gait_trace(ckpt: &Checkpoint, gait: Gait, opts: &EvalOptions) -> Result<GaitTrace> {
    let mut run = EvalRun::new(ckpt, gait, ckpt.config.task.terrain.kind)?;
    let mut interrupted = false;
    for _ in 0..run.steps_for(opts.warmup_s) {
        interrupted |= run.step()?.done;
    }
    let n = run.steps_for(opts.trace_s);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        interrupted |= run.step()?.done;
        let s = &run.env.state;
        let phase = gait_phase(s.time, run.env.gait.frequency);
        rows.push(TraceRow {
            time: s.time,
            phase,
            force: std::array::from_fn(|l| s.foot_forces[l].z),
            contact: std::array::from_fn(|l| foot_in_contact(s, l)),
            director: directors(phase, &run.env.gait),
        });
    }
    Ok(GaitTrace {
        gait,
        dt: run.dt(),
        frequency: run.env.gait.frequency,
        rows,
        interrupted,
    })
}

/// Phase lag of `b` relative to `a` as a fraction of a cycle of `period`
/// samples, in `[0, 0.5]`: the shift that maximises their circular
/// cross-correlation within one cycle, folded to the nearer direction.
/// Two constant series have lag 0.
pub fn phase_lag(a: &[f64], b: &[f64], period: f64) -> f64 {
    let n = a.len().min(b.len());
    let p = period.round().max(1.0) as usize;
    if n < 2 {
        return 0.0;
    }
    let center = |x: &[f64]| {
        let m = x[..n].iter().sum::<f64>() / n as f64;
        x[..n].iter().map(|v| v - m).collect::<Vec<_>>()
    };
    let (ca, cb) = (center(a), center(b));
    if ca.iter().all(|v| *v == 0.0) || cb.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let mut best = (f64::NEG_INFINITY, 0usize);
    for k in 0..p {
        // correlate a[t] with b[t + k] over the overlap
        let mut s = 0.0;
        let mut cnt = 0usize;
        for t in 0..n.saturating_sub(k) {
            s += ca[t] * cb[t + k];
            cnt += 1;
        }
        let v = if cnt > 0 {
            s / cnt as f64
        } else {
            f64::NEG_INFINITY
        };
        if v > best.0 {
            best = (v, k);
        }
    }
    let frac = best.1 as f64 / period;
    frac.min(1.0 - frac).max(0.0)
}

/// Pearson correlation; identical inputs give 1, a constant input that is
/// not matched exactly gives 0.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 1.0;
    }
    let n = a.len().min(b.len()) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PushReport {
    pub gait: Gait,
    /// Body-frame impulse, N*s.
    pub impulse: [f64; 3],
    pub push_time: f64,
    pub cycle_steps: f64,
    /// Per-cycle correlation between the pushed and undisturbed contact
    /// patterns, starting with the cycle that contains the push.
    pub correlations: Vec<f64>,
    /// First cycle from which every later cycle stays above the threshold;
    /// `None` if the pattern never settles or the robot fell.
    pub recovery_cycles: Option<usize>,
    pub fell: bool,
}

/// Push the robot mid-gait and measure how many gait cycles its contact
/// pattern needs to rejoin the undisturbed run. The template is the same
/// episode continued without the push, so both runs share the gait clock
/// and the comparison is phase-aligned by construction.
pub fn push_recovery(
    ckpt: &Checkpoint,
    gait: Gait,
    impulse: Vector3<f64>,
    opts: &EvalOptions,
) -> Result<PushReport> {
    let mut run = EvalRun::new(ckpt, gait, TerrainKind::Flat)?;
    for _ in 0..run.steps_for(opts.warmup_s) {
        run.step()?;
    }
    let push_time = run.env.state.time;
    let mut template = EvalRun {
        ckpt,
        task: run.task.clone(),
        env: run.env.clone(),
    };
    let mass = run.task.morphology.body_mass * run.env.params.mass_scale;
    run.env.state = apply_push(&run.env.state, &impulse, mass);

    let cycle = run.cycle_steps();
    let total = (cycle * opts.push_cycles as f64).round() as usize;
    let contacts = |env: &LocoEnv| -> [f64; NUM_LEGS] {
        std::array::from_fn(|l| foot_in_contact(&env.state, l) as u8 as f64)
    };
    let mut pushed = Vec::with_capacity(total);
    let mut reference = Vec::with_capacity(total);
    let mut fell = false;
    for _ in 0..total {
        let r = run.step()?;
        let t = template.step()?;
        if r.done || t.done {
            fell = r.finished.as_ref().is_some_and(|e| e.fell || e.fault);
            if r.done {
                break;
            }
        }
        pushed.push(contacts(&run.env));
        reference.push(contacts(&template.env));
    }
    let mut correlations = Vec::new();
    let mut k = 0;
    loop {
        let s = (k as f64 * cycle).round() as usize;
        let e = (((k + 1) as f64) * cycle).round() as usize;
        if e > pushed.len() || s >= e {
            break;
        }
        let flat = |v: &[[f64; NUM_LEGS]]| v.iter().flatten().copied().collect::<Vec<_>>();
        correlations.push(pearson(&flat(&pushed[s..e]), &flat(&reference[s..e])));
        k += 1;
    }
    let recovery_cycles = if fell || correlations.is_empty() {
        None
    } else {
        let last_bad = correlations.iter().rposition(|c| *c < RECOVERY_CORRELATION);
        match last_bad {
            None => Some(0),
            Some(i) if i + 1 < correlations.len() => Some(i + 1),
            Some(_) => None,
        }
    };
    Ok(PushReport {
        gait,
        impulse: [impulse.x, impulse.y, impulse.z],
        push_time,
        cycle_steps: cycle,
        correlations,
        recovery_cycles,
        fell,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TerrainRow {
    pub terrain: TerrainKind,
    pub gait: Gait,
    pub steps: usize,
    pub mean_tracking_lin: f64,
    pub mean_tracking_ang: f64,
    /// Mean of `tracking_lin + tracking_ang` per step.
    pub mean_tracking: f64,
    pub falls: usize,
}

/// Mean tracking reward per terrain for every configured gait. Also returns
/// the uneven heightfield that was used.
pub fn terrain_report(ckpt: &Checkpoint, opts: &EvalOptions) -> Result<(Vec<TerrainRow>, Terrain)> {
    let mut rows = Vec::new();
    let mut uneven = Terrain::flat();
    for kind in [TerrainKind::Flat, TerrainKind::Uneven] {
        for &gait in &ckpt.config.task.gaits {
            let mut run = EvalRun::new(ckpt, gait, kind)?;
            if kind == TerrainKind::Uneven && rows.len() == ckpt.config.task.gaits.len() {
                uneven = run.env.terrain.clone();
            }
            let n = run.steps_for(opts.terrain_s);
            let (mut lin, mut ang, mut falls) = (0.0, 0.0, 0);
            for _ in 0..n {
                let r = run.step()?;
                lin += r.terms[Term::TrackingLin.index()];
                ang += r.terms[Term::TrackingAng.index()];
                falls += r.finished.as_ref().is_some_and(|e| e.fell) as usize;
            }
            let nf = n.max(1) as f64;
            rows.push(TerrainRow {
                terrain: kind,
                gait,
                steps: n,
                mean_tracking_lin: lin / nf,
                mean_tracking_ang: ang / nf,
                mean_tracking: (lin + ang) / nf,
                falls,
            });
        }
    }
    Ok((rows, uneven))
}

pub fn write_terrain_csv<W: Write>(rows: &[TerrainRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| MasqError::io("terrain report", e))?;
    Ok(())
}
