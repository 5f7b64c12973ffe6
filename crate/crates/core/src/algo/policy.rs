use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{MasqError, Result};
use crate::nn::{forward_batch, Activation, AdamHyper, AdamState, ParamStore, Prepared};
use crate::obs::{ActorObs, CriticObs, ACTION_DIM, ACTOR_OBS_DIM, CRITIC_OBS_DIM, NUM_AGENTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub activation: Activation,
    pub actor_output_gain: f64,
    /// Initial log standard deviation of every action dimension.
    pub init_logstd: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            actor_hidden: vec![256, 128],
            critic_hidden: vec![512, 256],
            activation: Activation::Elu,
            actor_output_gain: 0.01,
            init_logstd: -1.2,
        }
    }
}

/// Actor, critic and the observation normalisers they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub mode: Mode,
    pub actor: ParamStore,
    pub critic: ParamStore,
    /// Per-leg statistics, shared by all four agents.
    pub actor_norm: crate::obs::RunningNorm,
    pub critic_norm: crate::obs::RunningNorm,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(mode: Mode, net: &NetConfig, rng: &mut R) -> Result<Self> {
        let mut actor = ParamStore::mlp(
            mode.actor_in(),
            &net.actor_hidden,
            mode.act_dim(),
            net.activation,
            mode.act_dim(),
        )?;
        actor.init_orthogonal(rng, 1.0, net.actor_output_gain);
        actor.logstd_mut().fill(net.init_logstd);
        actor.clamp_logstd();
        let mut critic = ParamStore::mlp(
            CRITIC_OBS_DIM,
            &net.critic_hidden,
            mode.critic_heads(),
            net.activation,
            0,
        )?;
        critic.init_orthogonal(rng, 1.0, 1.0);
        Ok(Self {
            mode,
            actor,
            critic,
            actor_norm: crate::obs::RunningNorm::new(ACTOR_OBS_DIM),
            critic_norm: crate::obs::RunningNorm::new(CRITIC_OBS_DIM),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.mode;
        if self.actor.input_dim() != m.actor_in() || self.actor.output_dim() != m.act_dim() {
            return Err(MasqError::Config(format!(
                "actor shape {}->{} does not fit mode {}",
                self.actor.input_dim(),
                self.actor.output_dim(),
                m.name()
            )));
        }
        if self.actor.logstd_len() != m.act_dim() {
            return Err(MasqError::dim(
                "actor logstd",
                m.act_dim(),
                self.actor.logstd_len(),
            ));
        }
        if self.critic.input_dim() != CRITIC_OBS_DIM {
            return Err(MasqError::dim(
                "critic input",
                CRITIC_OBS_DIM,
                self.critic.input_dim(),
            ));
        }
        if self.critic.output_dim() != m.critic_heads() {
            return Err(MasqError::dim(
                "critic heads",
                m.critic_heads(),
                self.critic.output_dim(),
            ));
        }
        if self.actor_norm.dim() != ACTOR_OBS_DIM || self.critic_norm.dim() != CRITIC_OBS_DIM {
            return Err(MasqError::Config(
                "normaliser dimensions do not match".into(),
            ));
        }
        Ok(())
    }

    /// Normalised actor input: the four per-leg slices back to back, which is
    /// also the concatenated single-agent input.
    pub fn actor_input(&self, obs: &ActorObs) -> [f64; NUM_AGENTS * ACTOR_OBS_DIM] {
        let mut out = [0.0; NUM_AGENTS * ACTOR_OBS_DIM];
        for (n, a) in obs.agents.iter().enumerate() {
            self.actor_norm
                .normalize_into(a, &mut out[n * ACTOR_OBS_DIM..(n + 1) * ACTOR_OBS_DIM]);
        }
        out
    }

    pub fn critic_input(&self, obs: &CriticObs) -> [f64; CRITIC_OBS_DIM] {
        let mut out = [0.0; CRITIC_OBS_DIM];
        self.critic_norm.normalize_into(&obs.0, &mut out);
        out
    }

    /// Action means for one step from normalised inputs (12 values in leg order).
    pub fn action_mean(&self, actor: &Prepared<'_>, input: &[f64]) -> Result<[f64; ACTION_DIM]> {
        let n = self.mode.agents();
        let cache = forward_batch(actor, input, n)?;
        let mut out = [0.0; ACTION_DIM];
        out.copy_from_slice(cache.output());
        Ok(out)
    }

    /// Deterministic action for a raw observation.
    pub fn act_deterministic(&self, obs: &ActorObs) -> Result<[f64; ACTION_DIM]> {
        let net = Prepared::new(&self.actor);
        self.action_mean(&net, &self.actor_input(obs))
    }
}

/// Adam state for both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub actor: AdamState,
    pub critic: AdamState,
}

impl Optimizers {
    pub fn new(policy: &Policy, lr: f64) -> Self {
        let hyper = AdamHyper {
            lr,
            ..AdamHyper::default()
        };
        Self {
            actor: AdamState::new(policy.actor.len(), hyper),
            critic: AdamState::new(policy.critic.len(), hyper),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_per_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Policy::new(Mode::Masq, &NetConfig::default(), &mut rng).unwrap();
        p.validate().unwrap();
        assert_eq!(p.actor.input_dim(), 35);
        assert_eq!(p.actor.output_dim(), 3);
        assert_eq!(p.critic.input_dim(), 73);
        assert_eq!(p.critic.output_dim(), 4);
        let s = Policy::new(Mode::PpoSingle, &NetConfig::default(), &mut rng).unwrap();
        s.validate().unwrap();
        assert_eq!(s.actor.input_dim(), 140);
        assert_eq!(s.actor.output_dim(), 12);
        assert_eq!(s.critic.output_dim(), 1);
    }
}
