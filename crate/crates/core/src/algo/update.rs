use rand::seq::SliceRandom;
use rand::Rng;

use super::buffer::{Advantage, RolloutBuffer};
use super::policy::{Optimizers, Policy};
use super::{clipped_surrogate, Mode, TrainConfig};
use crate::error::{MasqError, Result};
use crate::nn::{
    adam_step, backward_batch, clamp_logstd, forward_batch, gaussian_entropy, gaussian_logprob,
    Prepared, LOGSTD_MAX, LOGSTD_MIN,
};
use crate::obs::{ACTION_DIM, ACTOR_OBS_CONCAT_DIM, CRITIC_OBS_DIM};
use crate::par::{self, Exec};

/// Samples per gradient chunk. Fixed, so the reduction order (and hence every
/// bit of the gradient) is the same on the sequential and parallel paths.
const CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// `-surrogate + value_coef * value_loss - entropy_coef * entropy`.
    pub loss: f64,
    /// Clipped surrogate, averaged over samples and summed over agents.
    pub surrogate: f64,
    /// Squared value error, averaged over samples and summed over heads.
    pub value_loss: f64,
    /// Policy entropy summed over agents.
    pub entropy: f64,
    pub clip_fraction: f64,
    /// `E[(r - 1) - ln r]`.
    pub approx_kl: f64,
    /// Largest `|r - 1|` in the batch.
    pub max_ratio_dev: f64,
    pub actor_grad: Vec<f64>,
    pub critic_grad: Vec<f64>,
}

struct Partial {
    surrogate: f64,
    value_sq: f64,
    clipped: usize,
    kl: f64,
    dev: f64,
    actor_grad: Vec<f64>,
    critic_grad: Vec<f64>,
}

fn chunk_loss(
    mode: Mode,
    actor: &Prepared<'_>,
    critic: &Prepared<'_>,
    logstd: &[f64],
    buf: &RolloutBuffer,
    adv: &Advantage,
    idx: &[usize],
    cfg: &TrainConfig,
    inv_m: f64,
) -> Result<Partial> {
    let agents = mode.agents();
    let (obs_dim, act_dim) = (mode.actor_in(), mode.act_dim());
    let rows = idx.len() * agents;

    let mut x = Vec::with_capacity(idx.len() * ACTOR_OBS_CONCAT_DIM);
    for &i in idx {
        x.extend_from_slice(
            &buf.actor_obs[i * ACTOR_OBS_CONCAT_DIM..(i + 1) * ACTOR_OBS_CONCAT_DIM],
        );
    }
    debug_assert_eq!(x.len(), rows * obs_dim);
    let cache = forward_batch(actor, &x, rows)?;
    let mu = cache.output();
    let ls: Vec<f64> = logstd.iter().map(|&l| clamp_logstd(l)).collect();
    let ls_live: Vec<f64> = logstd
        .iter()
        .map(|&l| {
            if (LOGSTD_MIN..=LOGSTD_MAX).contains(&l) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let mut g_mu = vec![0.0; rows * act_dim];
    let mut actor_grad = vec![0.0; actor.params().len()];
    let ls_off = actor.params().logstd_offset();
    let (mut surrogate, mut clipped, mut kl, mut dev) = (0.0, 0, 0.0, 0.0f64);
    for (c, &i) in idx.iter().enumerate() {
        for n in 0..agents {
            let r = c * agents + n;
            let k = i * agents + n;
            let m = &mu[r * act_dim..(r + 1) * act_dim];
            let a = &buf.actions[i * ACTION_DIM + n * act_dim..i * ACTION_DIM + (n + 1) * act_dim];
            let logp = gaussian_logprob(m, &ls, a);
            let ratio = (logp - buf.logprobs[k]).exp();
            let advantage = adv.advantages[k];
            surrogate += clipped_surrogate(ratio, advantage, cfg.clip_eps);
            let lo = 1.0 - cfg.clip_eps;
            let hi = 1.0 + cfg.clip_eps;
            let ds_dr = if ratio * advantage <= ratio.clamp(lo, hi) * advantage {
                advantage
            } else {
                0.0
            };
            // d(-surrogate)/d(log pi)
            let coeff = -inv_m * ds_dr * ratio;
            for j in 0..act_dim {
                let inv_sigma = (-ls[j]).exp();
                let z = (a[j] - m[j]) * inv_sigma;
                g_mu[r * act_dim + j] = coeff * z * inv_sigma;
                actor_grad[ls_off + j] += coeff * (z * z - 1.0) * ls_live[j];
            }
            if (ratio - 1.0).abs() > cfg.clip_eps {
                clipped += 1;
            }
            kl += (ratio - 1.0) - ratio.ln();
            dev = dev.max((ratio - 1.0).abs());
        }
    }
    backward_batch(actor, &cache, &g_mu, &mut actor_grad, false)?;

    let mut xc = Vec::with_capacity(idx.len() * CRITIC_OBS_DIM);
    for &i in idx {
        xc.extend_from_slice(&buf.critic_obs[i * CRITIC_OBS_DIM..(i + 1) * CRITIC_OBS_DIM]);
    }
    let vcache = forward_batch(critic, &xc, idx.len())?;
    let v = vcache.output();
    let mut g_v = vec![0.0; idx.len() * agents];
    let mut value_sq = 0.0;
    for (c, &i) in idx.iter().enumerate() {
        for n in 0..agents {
            let d = v[c * agents + n] - adv.returns[i * agents + n];
            value_sq += d * d;
            g_v[c * agents + n] = cfg.value_coef * 2.0 * inv_m * d;
        }
    }
    let mut critic_grad = vec![0.0; critic.params().len()];
    backward_batch(critic, &vcache, &g_v, &mut critic_grad, false)?;
    Ok(Partial {
        surrogate,
        value_sq,
        clipped,
        kl,
        dev,
        actor_grad,
        critic_grad,
    })
}

/// Full loss and its gradient over the samples `idx` of the buffer.
///
/// Each agent's ratio comes from the one shared actor, so in `masq` mode the
/// four legs' contributions are summed into a single parameter gradient.
pub fn loss_and_grad(
    policy: &Policy,
    buf: &RolloutBuffer,
    adv: &Advantage,
    idx: &[usize],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<LossOutput> {
    let mode = policy.mode;
    let agents = mode.agents();
    if buf.agents != agents || !buf.check_shapes() {
        return Err(MasqError::Config(
            "rollout buffer does not match the policy mode".into(),
        ));
    }
    if adv.advantages.len() != buf.samples() * agents || adv.returns.len() != adv.advantages.len() {
        return Err(MasqError::dim(
            "advantages",
            buf.samples() * agents,
            adv.advantages.len(),
        ));
    }
    if idx.is_empty() {
        return Err(MasqError::Config("empty minibatch".into()));
    }
    let actor = Prepared::new(&policy.actor);
    let critic = Prepared::new(&policy.critic);
    let logstd = policy.actor.logstd();
    let inv_m = 1.0 / idx.len() as f64;
    let parts = par::map_chunks(exec, idx.len(), CHUNK, |s, e| {
        chunk_loss(
            mode,
            &actor,
            &critic,
            logstd,
            buf,
            adv,
            &idx[s..e],
            cfg,
            inv_m,
        )
    });

    let mut out = LossOutput {
        loss: 0.0,
        surrogate: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        clip_fraction: 0.0,
        approx_kl: 0.0,
        max_ratio_dev: 0.0,
        actor_grad: vec![0.0; policy.actor.len()],
        critic_grad: vec![0.0; policy.critic.len()],
    };
    let mut clipped = 0;
    for p in parts {
        let p = p?;
        out.surrogate += p.surrogate;
        out.value_loss += p.value_sq;
        out.approx_kl += p.kl;
        clipped += p.clipped;
        out.max_ratio_dev = out.max_ratio_dev.max(p.dev);
        for (g, x) in out.actor_grad.iter_mut().zip(&p.actor_grad) {
            *g += x;
        }
        for (g, x) in out.critic_grad.iter_mut().zip(&p.critic_grad) {
            *g += x;
        }
    }
    let pairs = (idx.len() * agents) as f64;
    out.surrogate *= inv_m;
    out.value_loss *= inv_m;
    out.approx_kl /= pairs;
    out.clip_fraction = clipped as f64 / pairs;
    let ls: Vec<f64> = logstd.iter().map(|&l| clamp_logstd(l)).collect();
    out.entropy = agents as f64 * gaussian_entropy(&ls);
    let ls_off = policy.actor.logstd_offset();
    for (j, &l) in logstd.iter().enumerate() {
        if (LOGSTD_MIN..=LOGSTD_MAX).contains(&l) {
            out.actor_grad[ls_off + j] -= cfg.entropy_coef * agents as f64;
        }
    }
    out.loss = -out.surrogate + cfg.value_coef * out.value_loss - cfg.entropy_coef * out.entropy;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    /// Pre-clipping gradient norm, averaged over minibatches.
    pub grad_norm: f64,
    /// `max |r - 1|` on the first minibatch of the first epoch.
    pub first_ratio_dev: f64,
    pub minibatch_steps: usize,
    /// A non-finite loss or gradient was hit; parameters were rolled back.
    pub skipped: bool,
}

/// Epochs of shuffled minibatch Adam steps on the clipped-surrogate loss.
/// Any non-finite loss or gradient rolls the networks and optimisers back to
/// their state at entry and reports the update as skipped.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut Policy,
    opt: &mut Optimizers,
    buf: &RolloutBuffer,
    adv: &Advantage,
    cfg: &TrainConfig,
    rng: &mut R,
    exec: Exec,
) -> Result<UpdateStats> {
    let n = buf.samples();
    if cfg.minibatches == 0 || n % cfg.minibatches != 0 {
        return Err(MasqError::Config(
            "samples must divide into minibatches".into(),
        ));
    }
    let mb = n / cfg.minibatches;
    let snapshot = (policy.clone(), opt.clone());
    let mut stats = UpdateStats::default();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs_per_update {
        order.shuffle(rng);
        for b in 0..cfg.minibatches {
            let idx = &order[b * mb..(b + 1) * mb];
            let out = match loss_and_grad(policy, buf, adv, idx, cfg, exec) {
                Ok(o) if o.loss.is_finite() => o,
                Ok(_) | Err(MasqError::NonFinite(_)) => {
                    (*policy, *opt) = snapshot;
                    return Ok(UpdateStats {
                        skipped: true,
                        ..UpdateStats::default()
                    });
                }
                Err(e) => return Err(e),
            };
            if epoch == 0 && b == 0 {
                stats.first_ratio_dev = out.max_ratio_dev;
            }
            let LossOutput {
                mut actor_grad,
                mut critic_grad,
                ..
            } = out.clone();
            let norm = actor_grad
                .iter()
                .chain(&critic_grad)
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            if norm > cfg.max_grad_norm {
                let s = cfg.max_grad_norm / norm;
                actor_grad
                    .iter_mut()
                    .chain(critic_grad.iter_mut())
                    .for_each(|g| *g *= s);
            }
            adam_step(&mut policy.actor, &actor_grad, &mut opt.actor)?;
            adam_step(&mut policy.critic, &critic_grad, &mut opt.critic)?;
            policy.actor.clamp_logstd();
            stats.surrogate += out.surrogate;
            stats.value_loss += out.value_loss;
            stats.entropy += out.entropy;
            stats.clip_fraction += out.clip_fraction;
            stats.approx_kl += out.approx_kl;
            stats.grad_norm += norm;
            stats.minibatch_steps += 1;
        }
    }
    if policy.actor.check_finite().is_err() || policy.critic.check_finite().is_err() {
        (*policy, *opt) = snapshot;
        return Ok(UpdateStats {
            skipped: true,
            ..UpdateStats::default()
        });
    }
    let k = stats.minibatch_steps.max(1) as f64;
    stats.surrogate /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.clip_fraction /= k;
    stats.approx_kl /= k;
    stats.grad_norm /= k;
    Ok(stats)
}

/// Update for the leg-as-agent policy.
pub fn masq_update<R: Rng + ?Sized>(
    policy: &mut Policy,
    opt: &mut Optimizers,
    buf: &RolloutBuffer,
    adv: &Advantage,
    cfg: &TrainConfig,
    rng: &mut R,
    exec: Exec,
) -> Result<UpdateStats> {
    if policy.mode != Mode::Masq {
        return Err(MasqError::Config("masq_update needs a masq policy".into()));
    }
    ppo_update(policy, opt, buf, adv, cfg, rng, exec)
}

/// Update for the single-agent baseline.
pub fn ppo_single_update<R: Rng + ?Sized>(
    policy: &mut Policy,
    opt: &mut Optimizers,
    buf: &RolloutBuffer,
    adv: &Advantage,
    cfg: &TrainConfig,
    rng: &mut R,
    exec: Exec,
) -> Result<UpdateStats> {
    if policy.mode != Mode::PpoSingle {
        return Err(MasqError::Config(
            "ppo_single_update needs a ppo_single policy".into(),
        ));
    }
    ppo_update(policy, opt, buf, adv, cfg, rng, exec)
}
