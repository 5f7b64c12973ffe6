//! Training loop and run-directory output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::algo::{
    collect_rollout, compute_returns_advantages, masq_update, ppo_single_update, sub_seed, LocoEnv,
    Mode, Optimizers, Policy, TrainConfig, UpdateStats,
};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{MasqError, Result};
use crate::obs::{obs_manifest, Gait, ACTOR_OBS_DIM, CRITIC_OBS_DIM, NUM_AGENTS};
use crate::par::Exec;
use crate::reward::{Term, NUM_TERMS};
use crate::schedule::{curriculum_step, CurriculumState};

/// Consecutive skipped updates tolerated before training aborts.
pub const MAX_CONSECUTIVE_SKIPS: usize = 3;

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub update: usize,
    /// Environment steps collected so far, this update included.
    pub steps: usize,
    pub mean_step_reward: f64,
    /// Mean return of the episodes finished during this update (NaN if none).
    pub mean_episode_reward: f64,
    pub episodes: usize,
    pub falls: usize,
    /// Steps of the episodes finished during this update.
    pub episode_steps: usize,
    /// Steps of the finished episodes that ended in a fall.
    pub fall_steps: usize,
    pub faults: usize,
    /// Per-step mean of each unweighted reward term.
    pub terms: [f64; NUM_TERMS],
    pub stats: UpdateStats,
    pub levels: [u32; 4],
}

pub fn metrics_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "update",
        "steps",
        "mean_step_reward",
        "mean_episode_reward",
        "episodes",
        "falls",
        "episode_steps",
        "fall_steps",
        "faults",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend(Term::ALL.iter().map(|t| format!("term_{}", t.name())));
    h.extend(
        [
            "surrogate",
            "value_loss",
            "entropy",
            "clip_fraction",
            "approx_kl",
            "grad_norm",
            "first_ratio_dev",
            "skipped",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    h.extend(Gait::ALL.iter().map(|g| format!("level_{}", g.name())));
    h
}

impl UpdateRecord {
    pub fn term(&self, t: Term) -> f64 {
        self.terms[t.index()]
    }

    pub fn to_row(&self) -> Vec<String> {
        let mut r = vec![
            self.update.to_string(),
            self.steps.to_string(),
            self.mean_step_reward.to_string(),
            self.mean_episode_reward.to_string(),
            self.episodes.to_string(),
            self.falls.to_string(),
            self.episode_steps.to_string(),
            self.fall_steps.to_string(),
            self.faults.to_string(),
        ];
        r.extend(self.terms.iter().map(|v| v.to_string()));
        let s = &self.stats;
        r.extend(
            [
                s.surrogate,
                s.value_loss,
                s.entropy,
                s.clip_fraction,
                s.approx_kl,
                s.grad_norm,
                s.first_ratio_dev,
            ]
            .iter()
            .map(|v| v.to_string()),
        );
        r.push((s.skipped as u8).to_string());
        r.extend(self.levels.iter().map(|l| l.to_string()));
        r
    }
}

/// Wall-clock cost of one update, kept apart from the metrics so that the
/// metrics file is reproducible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateTiming {
    pub rollout_s: f64,
    pub update_s: f64,
    pub steps_per_s: f64,
}

/// All mutable training state.
pub struct Trainer {
    pub cfg: RunConfig,
    pub policy: Policy,
    pub opt: Optimizers,
    pub curriculum: CurriculumState,
    pub envs: Vec<LocoEnv>,
    pub update: usize,
    pub steps: usize,
    exec: Exec,
    rng: ChaCha8Rng,
    consecutive_skips: usize,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 0, 0));
        let policy = Policy::new(cfg.mode, &cfg.net, &mut init)?;
        let opt = Optimizers::new(&policy, cfg.train.lr);
        let curriculum = CurriculumState::new(cfg.task.curriculum.clone());
        let envs = (0..cfg.train.num_envs)
            .map(|e| LocoEnv::new(e, cfg.seed, &cfg.task, &curriculum))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            exec: Exec::from_flag(cfg.parallel),
            rng: ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 3, 0)),
            cfg,
            policy,
            opt,
            curriculum,
            envs,
            update: 0,
            steps: 0,
            consecutive_skips: 0,
        })
    }

    /// Collect, estimate advantages, update, then refresh the normalisers and
    /// the curriculum. Returns the metrics row, the timing and the
    /// randomisation events of the rollout.
    pub fn step(
        &mut self,
    ) -> Result<(UpdateRecord, UpdateTiming, Vec<crate::schedule::RandEvent>)> {
        let t0 = Instant::now();
        let tc = &self.cfg.train;
        let ro = collect_rollout(
            &self.policy,
            &mut self.envs,
            tc.horizon,
            &self.cfg.task,
            &self.curriculum,
            self.exec,
        )?;
        let t1 = Instant::now();
        let adv = compute_returns_advantages(
            &ro.buffer,
            tc.gamma,
            tc.gae_lambda,
            tc.normalize_advantages,
        );
        let update = match self.policy.mode {
            Mode::Masq => masq_update,
            Mode::PpoSingle => ppo_single_update,
        };
        let tc_now = TrainConfig {
            entropy_coef: tc.entropy_coef_at(self.update),
            ..tc.clone()
        };
        let stats = update(
            &mut self.policy,
            &mut self.opt,
            &ro.buffer,
            &adv,
            &tc_now,
            &mut self.rng,
            self.exec,
        )?;
        if stats.skipped {
            self.consecutive_skips += 1;
            if self.consecutive_skips > MAX_CONSECUTIVE_SKIPS {
                return Err(MasqError::NonFinite(format!(
                    "NaN storm: {} consecutive updates skipped (last at update {}); \
                     try a lower learning rate or check reward scales",
                    self.consecutive_skips, self.update
                )));
            }
        } else {
            self.consecutive_skips = 0;
        }
        let n = ro.buffer.samples();
        self.policy
            .actor_norm
            .update(&ro.raw_actor_obs, n * NUM_AGENTS);
        self.policy.critic_norm.update(&ro.raw_critic_obs, n);
        debug_assert_eq!(ro.raw_actor_obs.len(), n * NUM_AGENTS * ACTOR_OBS_DIM);
        debug_assert_eq!(ro.raw_critic_obs.len(), n * CRITIC_OBS_DIM);
        // Sort into (env, step) order so the curriculum sees a fixed sequence.
        let mut eps = ro.stats.episodes.clone();
        eps.sort_by_key(|e| e.env);
        for ep in &eps {
            if !ep.fault {
                self.curriculum = curriculum_step(&self.curriculum, ep.gait, ep.mean_tracking)?;
            }
        }
        let t2 = Instant::now();

        self.update += 1;
        self.steps += ro.stats.steps;
        let s = &ro.stats;
        let mut terms = [0.0; NUM_TERMS];
        for t in Term::ALL {
            terms[t.index()] = s.term_mean(t);
        }
        let episodes = eps.len();
        let mean_episode_reward = if episodes == 0 {
            f64::NAN
        } else {
            eps.iter().map(|e| e.total_reward).sum::<f64>() / episodes as f64
        };
        let rec = UpdateRecord {
            update: self.update,
            steps: self.steps,
            mean_step_reward: s.reward_sum / s.steps.max(1) as f64,
            mean_episode_reward,
            episodes,
            falls: eps.iter().filter(|e| e.fell).count(),
            episode_steps: eps.iter().map(|e| e.steps).sum(),
            fall_steps: eps.iter().filter(|e| e.fell).map(|e| e.steps).sum(),
            faults: s.faults,
            terms,
            stats,
            levels: self.curriculum.levels,
        };
        let total = (t2 - t0).as_secs_f64();
        let timing = UpdateTiming {
            rollout_s: (t1 - t0).as_secs_f64(),
            update_s: (t2 - t1).as_secs_f64(),
            steps_per_s: s.steps as f64 / total.max(1e-12),
        };
        Ok((rec, timing, ro.events))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            update: self.update as u64,
            policy: self.policy.clone(),
            opt: self.opt.clone(),
            curriculum: self.curriculum.clone(),
        }
    }
}

/// Files of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub records: Vec<UpdateRecord>,
    pub final_checkpoint: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| MasqError::io(path, e))?,
    ))
}

/// Train for `total_updates` updates, writing into `out_dir`:
/// `config.toml`, `obs_manifest.json`, `metrics.csv`, `timing.csv`,
/// `events.jsonl`, `checkpoints/update_NNNNN.ckpt` and `final.ckpt`.
/// `on_update` sees every metrics row as it is written.
pub fn run_training(
    cfg: &RunConfig,
    out_dir: &Path,
    mut on_update: impl FnMut(&UpdateRecord, &UpdateTiming),
) -> Result<RunOutput> {
    cfg.validate()?;
    let ckpt_dir = out_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| MasqError::io(&ckpt_dir, e))?;
    cfg.save(&out_dir.join("config.toml"))?;
    let manifest = out_dir.join("obs_manifest.json");
    serde_json::to_writer_pretty(create(&manifest)?, &obs_manifest())?;

    let mut metrics = csv::Writer::from_writer(create(&out_dir.join("metrics.csv"))?);
    metrics.write_record(metrics_header())?;
    let mut timing = csv::Writer::from_writer(create(&out_dir.join("timing.csv"))?);
    timing.write_record(["update", "rollout_s", "update_s", "steps_per_s"])?;
    let events_path = out_dir.join("events.jsonl");
    let mut events = create(&events_path)?;

    let mut trainer = Trainer::new(cfg.clone())?;
    let mut records = Vec::with_capacity(cfg.train.total_updates);
    for _ in 0..cfg.train.total_updates {
        let (rec, tm, evs) = trainer.step()?;
        metrics.write_record(rec.to_row())?;
        metrics.flush().map_err(|e| MasqError::io(out_dir, e))?;
        timing.write_record([
            rec.update.to_string(),
            tm.rollout_s.to_string(),
            tm.update_s.to_string(),
            tm.steps_per_s.to_string(),
        ])?;
        timing.flush().map_err(|e| MasqError::io(out_dir, e))?;
        for ev in &evs {
            serde_json::to_writer(&mut events, ev)?;
            events
                .write_all(b"\n")
                .map_err(|e| MasqError::io(&events_path, e))?;
        }
        if cfg.checkpoint_every > 0 && trainer.update % cfg.checkpoint_every == 0 {
            let p = ckpt_dir.join(format!("update_{:05}.ckpt", trainer.update));
            trainer.checkpoint().save(&p)?;
        }
        on_update(&rec, &tm);
        records.push(rec);
    }
    events.flush().map_err(|e| MasqError::io(&events_path, e))?;
    let final_checkpoint = out_dir.join("final.ckpt");
    trainer.checkpoint().save(&final_checkpoint)?;
    Ok(RunOutput {
        dir: out_dir.to_path_buf(),
        records,
        final_checkpoint,
    })
}
