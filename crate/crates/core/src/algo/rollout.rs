use super::buffer::RolloutBuffer;
use super::policy::Policy;
use super::task::{EpisodeSummary, LocoEnv, TaskConfig};
use crate::error::Result;
use crate::nn::{forward_batch, gaussian_sample_logprob, Prepared};
use crate::obs::{ACTION_DIM, ACTOR_OBS_CONCAT_DIM, CRITIC_OBS_DIM};
use crate::par::{self, Exec};
use crate::reward::NUM_TERMS;
use crate::schedule::{CurriculumState, RandEvent};

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStats {
    pub steps: usize,
    /// Sum over all steps of each unweighted reward term.
    pub term_sums: [f64; NUM_TERMS],
    pub reward_sum: f64,
    pub faults: usize,
    /// Finished episodes in `(env, step)` order.
    pub episodes: Vec<EpisodeSummary>,
}

impl RolloutStats {
    pub fn term_mean(&self, term: crate::reward::Term) -> f64 {
        self.term_sums[term.index()] / self.steps.max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub buffer: RolloutBuffer,
    /// Raw (unnormalised) observations for the normaliser update.
    pub raw_actor_obs: Vec<f64>,
    pub raw_critic_obs: Vec<f64>,
    pub stats: RolloutStats,
    /// Randomisation events ordered by environment, then time.
    pub events: Vec<RandEvent>,
}

struct EnvTrace {
    actor_in: Vec<f64>,
    critic_in: Vec<f64>,
    raw_actor: Vec<f64>,
    raw_critic: Vec<f64>,
    actions: Vec<f64>,
    logprobs: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    last_values: Vec<f64>,
    term_sums: [f64; NUM_TERMS],
    faults: usize,
    episodes: Vec<EpisodeSummary>,
    events: Vec<RandEvent>,
}

fn run_env(
    env: &mut LocoEnv,
    policy: &Policy,
    actor: &Prepared<'_>,
    critic: &Prepared<'_>,
    steps: usize,
    task: &TaskConfig,
    cs: &CurriculumState,
) -> Result<EnvTrace> {
    let agents = policy.mode.agents();
    let act_dim = policy.mode.act_dim();
    let logstd = policy.actor.logstd().to_vec();
    let mut tr = EnvTrace {
        actor_in: Vec::with_capacity(steps * ACTOR_OBS_CONCAT_DIM),
        critic_in: Vec::with_capacity(steps * CRITIC_OBS_DIM),
        raw_actor: Vec::with_capacity(steps * ACTOR_OBS_CONCAT_DIM),
        raw_critic: Vec::with_capacity(steps * CRITIC_OBS_DIM),
        actions: Vec::with_capacity(steps * ACTION_DIM),
        logprobs: Vec::with_capacity(steps * agents),
        values: Vec::with_capacity(steps * agents),
        rewards: Vec::with_capacity(steps * agents),
        dones: Vec::with_capacity(steps),
        last_values: Vec::new(),
        term_sums: [0.0; NUM_TERMS],
        faults: 0,
        episodes: Vec::new(),
        events: env.take_events(),
    };
    for _ in 0..steps {
        let (ao, co) = env.observe();
        let a_in = policy.actor_input(&ao);
        let c_in = policy.critic_input(&co);
        let mean = forward_batch(actor, &a_in, agents)?;
        let noise = env.noise();
        let mut action = [0.0; ACTION_DIM];
        for n in 0..agents {
            let k = n * act_dim..(n + 1) * act_dim;
            let g = gaussian_sample_logprob(&mean.output()[k.clone()], &logstd, &noise[k.clone()])?;
            action[k].copy_from_slice(&g.sample);
            tr.logprobs.push(g.logprob);
        }
        let v = forward_batch(critic, &c_in, 1)?;
        tr.values.extend_from_slice(v.output());
        let r = env.step(&action, task, cs)?;
        for (s, t) in tr.term_sums.iter_mut().zip(r.terms) {
            *s += t;
        }
        if let Some(ep) = r.finished {
            tr.faults += ep.fault as usize;
            tr.episodes.push(ep);
        }
        tr.rewards.extend(std::iter::repeat_n(r.reward, agents));
        tr.dones.push(r.done);
        tr.actions.extend_from_slice(&action);
        tr.actor_in.extend_from_slice(&a_in);
        tr.critic_in.extend_from_slice(&c_in);
        for a in &ao.agents {
            tr.raw_actor.extend_from_slice(a);
        }
        tr.raw_critic.extend_from_slice(&co.0);
        tr.events.extend(env.take_events());
    }
    let (_, co) = env.observe();
    let v = forward_batch(critic, &policy.critic_input(&co), 1)?;
    tr.last_values = v.output().to_vec();
    Ok(tr)
}

/// Run every environment for `steps` control steps with the current policy
/// (sampled actions). Environments run independently, each with its own
/// noise stream, and are merged by `(step, env)`, so the result does not
/// depend on `exec`.
pub fn collect_rollout(
    policy: &Policy,
    envs: &mut [LocoEnv],
    steps: usize,
    task: &TaskConfig,
    cs: &CurriculumState,
    exec: Exec,
) -> Result<Rollout> {
    policy.validate()?;
    let actor = Prepared::new(&policy.actor);
    let critic = Prepared::new(&policy.critic);
    let traces = par::map_mut(exec, envs, |_, env| {
        run_env(env, policy, &actor, &critic, steps, task, cs)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let e_len = traces.len();
    let agents = policy.mode.agents();
    let mut buf = RolloutBuffer::zeros(steps, e_len, agents);
    let mut raw_actor = vec![0.0; steps * e_len * ACTOR_OBS_CONCAT_DIM];
    let mut raw_critic = vec![0.0; steps * e_len * CRITIC_OBS_DIM];
    let copy = |dst: &mut [f64], src: &[f64], i: usize, t: usize, w: usize| {
        dst[i * w..(i + 1) * w].copy_from_slice(&src[t * w..(t + 1) * w]);
    };
    for (e, tr) in traces.iter().enumerate() {
        for t in 0..steps {
            let i = t * e_len + e;
            copy(&mut buf.actor_obs, &tr.actor_in, i, t, ACTOR_OBS_CONCAT_DIM);
            copy(&mut buf.critic_obs, &tr.critic_in, i, t, CRITIC_OBS_DIM);
            copy(&mut raw_actor, &tr.raw_actor, i, t, ACTOR_OBS_CONCAT_DIM);
            copy(&mut raw_critic, &tr.raw_critic, i, t, CRITIC_OBS_DIM);
            copy(&mut buf.actions, &tr.actions, i, t, ACTION_DIM);
            copy(&mut buf.logprobs, &tr.logprobs, i, t, agents);
            copy(&mut buf.rewards, &tr.rewards, i, t, agents);
            copy(&mut buf.values, &tr.values, i, t, agents);
            buf.dones[i] = tr.dones[t];
        }
        buf.last_values[e * agents..(e + 1) * agents].copy_from_slice(&tr.last_values);
    }

    let mut term_sums = [0.0; NUM_TERMS];
    let mut faults = 0;
    let mut reward_sum = 0.0;
    let mut episodes = Vec::new();
    let mut events = Vec::new();
    for tr in traces {
        for (s, t) in term_sums.iter_mut().zip(tr.term_sums) {
            *s += t;
        }
        faults += tr.faults;
        for t in 0..steps {
            reward_sum += tr.rewards[t * agents];
        }
        episodes.extend(tr.episodes);
        events.extend(tr.events);
    }
    Ok(Rollout {
        buffer: buf,
        raw_actor_obs: raw_actor,
        raw_critic_obs: raw_critic,
        stats: RolloutStats {
            steps: steps * e_len,
            term_sums,
            reward_sum,
            faults,
            episodes,
        },
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algo::{Mode, NetConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net() -> NetConfig {
        NetConfig {
            actor_hidden: vec![16],
            critic_hidden: vec![16],
            ..NetConfig::default()
        }
    }

    fn run(mode: Mode, exec: Exec) -> Rollout {
        let task = TaskConfig::default();
        let cs = CurriculumState::new(task.curriculum.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = Policy::new(mode, &small_net(), &mut rng).unwrap();
        let mut envs: Vec<LocoEnv> = (0..3)
            .map(|e| LocoEnv::new(e, 5, &task, &cs).unwrap())
            .collect();
        collect_rollout(&policy, &mut envs, 8, &task, &cs, exec).unwrap()
    }

    #[test]
    fn shapes_and_shared_reward() {
        let r = run(Mode::Masq, Exec::Sequential);
        let b = &r.buffer;
        assert!(b.check_shapes());
        assert_eq!(b.actions.len(), 8 * 3 * 4 * 3);
        assert_eq!(b.values.len(), 8 * 3 * 4);
        for i in 0..b.samples() {
            let rw = &b.rewards[i * 4..(i + 1) * 4];
            assert!(rw.iter().all(|&x| x == rw[0]));
        }
        assert!(b.logprobs.iter().all(|l| l.is_finite()));
        assert_eq!(r.stats.steps, 24);
    }

    #[test]
    fn deterministic_and_exec_independent() {
        let a = run(Mode::Masq, Exec::Sequential);
        let b = run(Mode::Masq, Exec::Sequential);
        let c = run(Mode::Masq, Exec::Parallel);
        assert_eq!(a.buffer, b.buffer);
        assert_eq!(a.buffer, c.buffer);
        assert_eq!(a.events, c.events);
    }

    #[test]
    fn single_agent_layout() {
        let r = run(Mode::PpoSingle, Exec::Sequential);
        assert!(r.buffer.check_shapes());
        assert_eq!(r.buffer.values.len(), 8 * 3);
    }
}
