//! Learning core: rollouts, advantage estimation, and the clipped-surrogate
//! updates for both the leg-as-agent scheme and the single-agent baseline.
//!
//! In `masq` mode one actor network (35 inputs, 3 outputs) is evaluated once
//! per leg and all four legs' gradients land in the same parameters; the
//! critic sees the 73-dim global observation and emits one value per leg.
//! In `ppo_single` mode the actor maps the 140-dim concatenation to all 12
//! joints and the critic has a single head.

mod buffer;
mod policy;
mod rollout;
mod task;
mod update;

pub use buffer::{compute_returns_advantages, gae, normalize_advantages, Advantage, RolloutBuffer};
pub use policy::{NetConfig, Optimizers, Policy};
pub use rollout::{collect_rollout, Rollout, RolloutStats};
pub use task::{EpisodeSummary, LocoEnv, StepResult, TaskConfig, TerminationConfig, TerrainConfig};
pub use update::{
    loss_and_grad, masq_update, ppo_single_update, ppo_update, LossOutput, UpdateStats,
};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MasqError, Result};
use crate::obs::{
    ACTION_DIM, ACTOR_OBS_CONCAT_DIM, ACTOR_OBS_DIM, CRITIC_HEADS, LEG_ACTION_DIM, NUM_AGENTS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Masq,
    PpoSingle,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Masq => "masq",
            Mode::PpoSingle => "ppo_single",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "masq" => Some(Mode::Masq),
            "ppo_single" => Some(Mode::PpoSingle),
            _ => None,
        }
    }

    /// Policy samples per environment step.
    pub fn agents(self) -> usize {
        match self {
            Mode::Masq => NUM_AGENTS,
            Mode::PpoSingle => 1,
        }
    }

    pub fn actor_in(self) -> usize {
        match self {
            Mode::Masq => ACTOR_OBS_DIM,
            Mode::PpoSingle => ACTOR_OBS_CONCAT_DIM,
        }
    }

    pub fn act_dim(self) -> usize {
        match self {
            Mode::Masq => LEG_ACTION_DIM,
            Mode::PpoSingle => ACTION_DIM,
        }
    }

    pub fn critic_heads(self) -> usize {
        match self {
            Mode::Masq => CRITIC_HEADS,
            Mode::PpoSingle => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub lr: f64,
    pub epochs_per_update: usize,
    pub minibatches: usize,
    pub entropy_coef: f64,
    /// When set, the entropy coefficient moves linearly from `entropy_coef`
    /// at the first update to this value at the last.
    pub entropy_coef_final: Option<f64>,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Rollout horizon in control steps.
    pub horizon: usize,
    pub num_envs: usize,
    pub total_updates: usize,
    pub normalize_advantages: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            lr: 3e-4,
            epochs_per_update: 4,
            minibatches: 4,
            entropy_coef: 0.01,
            entropy_coef_final: None,
            value_coef: 0.5,
            max_grad_norm: 1.0,
            horizon: 64,
            num_envs: 16,
            total_updates: 300,
            normalize_advantages: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(MasqError::Config(m.into()));
        if !(0.0..1.0).contains(&self.gamma) {
            return err("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return err("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return err("clip_eps must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return err("lr must be finite and >= 0");
        }
        if self.horizon == 0 || self.num_envs == 0 || self.minibatches == 0 {
            return err("horizon, num_envs and minibatches must be positive");
        }
        if (self.horizon * self.num_envs) % self.minibatches != 0 {
            return err("horizon * num_envs must be divisible by minibatches");
        }
        if !(self.max_grad_norm > 0.0) {
            return err("max_grad_norm must be positive");
        }
        let final_coef = self.entropy_coef_final.unwrap_or(self.entropy_coef);
        if ![self.entropy_coef, final_coef, self.value_coef]
            .iter()
            .all(|c| c.is_finite())
        {
            return err("loss coefficients must be finite");
        }
        Ok(())
    }
}

impl TrainConfig {
    /// Entropy coefficient for the zero-based update `update`.
    pub fn entropy_coef_at(&self, update: usize) -> f64 {
        match self.entropy_coef_final {
            None => self.entropy_coef,
            Some(end) => {
                let span = self.total_updates.saturating_sub(1).max(1) as f64;
                let s = (update as f64 / span).min(1.0);
                self.entropy_coef + s * (end - self.entropy_coef)
            }
        }
    }
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_surrogate(ratio: f64, adv: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * adv).min(clipped * adv)
}

/// Independent seed for stream `tag` of item `index`.
pub fn sub_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag.wrapping_mul(0x1_0000_0000).wrapping_add(index));
    rng.next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_examples() {
        assert_eq!(clipped_surrogate(1.0, 0.7, 0.2), 0.7);
        assert_eq!(clipped_surrogate(1.5, 1.0, 0.2), 1.2);
        assert_eq!(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
        assert_eq!(clipped_surrogate(3.0, 2.0, f64::INFINITY), 6.0);
    }

    #[test]
    fn config_checks() {
        TrainConfig::default().validate().unwrap();
        let bad = TrainConfig {
            gamma: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            minibatches: 3,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            clip_eps: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn entropy_schedule() {
        let c = TrainConfig {
            total_updates: 5,
            ..TrainConfig::default()
        };
        assert_eq!(c.entropy_coef_at(4), 0.01);
        let c = TrainConfig {
            entropy_coef_final: Some(0.0),
            ..c
        };
        assert_eq!(c.entropy_coef_at(0), 0.01);
        assert!((c.entropy_coef_at(2) - 0.005).abs() < 1e-15);
        assert_eq!(c.entropy_coef_at(4), 0.0);
        assert_eq!(c.entropy_coef_at(9), 0.0);
        let bad = TrainConfig {
            entropy_coef_final: Some(f64::NAN),
            ..c
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sub_seeds_differ() {
        assert_ne!(sub_seed(1, 0, 0), sub_seed(1, 0, 1));
        assert_ne!(sub_seed(1, 0, 0), sub_seed(1, 1, 0));
        assert_eq!(sub_seed(7, 2, 3), sub_seed(7, 2, 3));
    }
}
