use crate::obs::{ACTION_DIM, ACTOR_OBS_CONCAT_DIM, CRITIC_OBS_DIM};

/// Trajectories of `t` steps for `e` environments. Sample `i = step * e + env`;
/// per-agent arrays are laid out `[i][agent]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub t: usize,
    pub e: usize,
    /// Policy samples per step: 4 legs, or 1 for the single-agent baseline.
    pub agents: usize,
    /// Normalised actor inputs, 140 per sample (four 35-dim leg slices).
    pub actor_obs: Vec<f64>,
    /// Normalised critic inputs, 73 per sample.
    pub critic_obs: Vec<f64>,
    /// Sampled (unclipped) actions, 12 per sample in leg order.
    pub actions: Vec<f64>,
    pub logprobs: Vec<f64>,
    /// Shared reward, replicated across the agent axis.
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Episode ended after this step (the stored next state is a fresh reset).
    pub dones: Vec<bool>,
    /// Critic values of the state following the last step, `[env][agent]`.
    pub last_values: Vec<f64>,
}

impl RolloutBuffer {
    pub fn zeros(t: usize, e: usize, agents: usize) -> Self {
        let n = t * e;
        Self {
            t,
            e,
            agents,
            actor_obs: vec![0.0; n * ACTOR_OBS_CONCAT_DIM],
            critic_obs: vec![0.0; n * CRITIC_OBS_DIM],
            actions: vec![0.0; n * ACTION_DIM],
            logprobs: vec![0.0; n * agents],
            rewards: vec![0.0; n * agents],
            values: vec![0.0; n * agents],
            dones: vec![false; n],
            last_values: vec![0.0; e * agents],
        }
    }

    pub fn samples(&self) -> usize {
        self.t * self.e
    }

    pub fn check_shapes(&self) -> bool {
        let n = self.samples();
        self.actor_obs.len() == n * ACTOR_OBS_CONCAT_DIM
            && self.critic_obs.len() == n * CRITIC_OBS_DIM
            && self.actions.len() == n * ACTION_DIM
            && self.logprobs.len() == n * self.agents
            && self.rewards.len() == n * self.agents
            && self.values.len() == n * self.agents
            && self.dones.len() == n
            && self.last_values.len() == self.e * self.agents
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Advantage {
    /// `[sample][agent]`.
    pub advantages: Vec<f64>,
    /// Value targets, `advantage + value` before normalisation.
    pub returns: Vec<f64>,
}

/// GAE(lambda) per agent from the shared rewards and that agent's critic head.
/// `lambda = 1` gives the discounted return minus the value.
pub fn gae(buf: &RolloutBuffer, gamma: f64, lambda: f64) -> Advantage {
    let (t_len, e_len, na) = (buf.t, buf.e, buf.agents);
    let mut advantages = vec![0.0; t_len * e_len * na];
    let mut returns = vec![0.0; t_len * e_len * na];
    for e in 0..e_len {
        for n in 0..na {
            let mut running = 0.0;
            for t in (0..t_len).rev() {
                let i = t * e_len + e;
                let k = i * na + n;
                let next_value = if t + 1 == t_len {
                    buf.last_values[e * na + n]
                } else {
                    buf.values[((t + 1) * e_len + e) * na + n]
                };
                let live = if buf.dones[i] { 0.0 } else { 1.0 };
                let delta = buf.rewards[k] + gamma * next_value * live - buf.values[k];
                running = delta + gamma * lambda * live * running;
                advantages[k] = running;
                returns[k] = running + buf.values[k];
            }
        }
    }
    Advantage {
        advantages,
        returns,
    }
}

/// Shift and scale the advantages to zero mean and unit (population) std.
pub fn normalize_advantages(adv: &mut Advantage) {
    let n = adv.advantages.len();
    if n == 0 {
        return;
    }
    let mean = adv.advantages.iter().sum::<f64>() / n as f64;
    let var = adv
        .advantages
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / n as f64;
    let std = var.sqrt();
    let scale = if std > 1e-12 { 1.0 / std } else { 1.0 };
    for a in &mut adv.advantages {
        *a = (*a - mean) * scale;
    }
}

pub fn compute_returns_advantages(
    buf: &RolloutBuffer,
    gamma: f64,
    lambda: f64,
    normalize: bool,
) -> Advantage {
    let mut adv = gae(buf, gamma, lambda);
    if normalize {
        normalize_advantages(&mut adv);
    }
    adv
}
