//! GAE, the PPO and A2C objectives with their gradients, and the optimiser.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::{gaussian_log_prob, ActorCritic, LOG_STD_MAX, LOG_STD_MIN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Ppo,
    A2c,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algo: Algo,
    pub total_steps: usize,
    /// Discount factor.
    pub gamma: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Environment steps collected between updates.
    pub n_steps: usize,
    pub n_epochs: usize,
    pub clip_range: f64,
    pub clipping_enabled: bool,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub max_grad_norm: f64,
    pub log_std_init: f64,
    pub normalize_advantage: bool,
}

impl TrainConfig {
    pub fn ppo(total_steps: usize) -> Self {
        Self {
            algo: Algo::Ppo,
            total_steps,
            gamma: 0.99,
            gae_lambda: 0.9,
            learning_rate: 3e-4,
            batch_size: 64,
            n_steps: 1280,
            n_epochs: 10,
            clip_range: 0.2,
            clipping_enabled: true,
            vf_coef: 1.0,
            ent_coef: 0.0,
            max_grad_norm: 0.5,
            log_std_init: 0.0,
            normalize_advantage: true,
        }
    }

    pub fn a2c(total_steps: usize) -> Self {
        Self {
            algo: Algo::A2c,
            total_steps,
            gamma: 0.99,
            gae_lambda: 0.9,
            learning_rate: 1e-4,
            batch_size: 256,
            n_steps: 256,
            n_epochs: 1,
            clip_range: 0.2,
            clipping_enabled: false,
            vf_coef: 1.0,
            ent_coef: 0.0,
            max_grad_norm: 0.5,
            log_std_init: -2.0,
            normalize_advantage: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.total_steps == 0 || self.n_steps == 0 || self.batch_size == 0 || self.n_epochs == 0 {
            return bad("step counts, batch size and epochs must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("discount must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0) || !(self.max_grad_norm > 0.0) || !(self.vf_coef >= 0.0) {
            return bad("learning rate and max grad norm must be positive, vf_coef non-negative");
        }
        if self.clipping_enabled && !(self.clip_range > 0.0) {
            return bad("clip range must be positive when clipping is enabled");
        }
        if self.ent_coef != 0.0 {
            return bad("entropy bonus is not supported; ent_coef must be 0");
        }
        if !self.log_std_init.is_finite() {
            return bad("log_std_init must be finite");
        }
        Ok(())
    }

    /// Epochs actually run per update: one when clipping is off.
    pub fn effective_epochs(&self) -> usize {
        match self.algo {
            Algo::Ppo if self.clipping_enabled => self.n_epochs,
            _ => 1,
        }
    }
}

/// `delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t`,
/// `A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}`, returns `A_t + V_t`.
///
/// `values[t]` is the value of the observation the action at `t` was taken
/// from; `bootstrap` is the value of the observation after the last step.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "rollout arrays must be aligned");
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let next_v = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next_v * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub observations: Vec<Vec<f64>>,
    pub contexts: Vec<usize>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    #[allow(clippy::too_many_arguments)]
    pub fn push(&mut self, obs: Vec<f64>, context: usize, action: Vec<f64>, log_prob: f64, reward: f64, value: f64, done: bool) {
        self.observations.push(obs);
        self.contexts.push(context);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
        self.advantages.clear();
        self.returns.clear();
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }

    pub fn compute_advantages(&mut self, bootstrap: f64, gamma: f64, lambda: f64) {
        let (a, r) = gae_advantages(&self.rewards, &self.values, &self.dones, bootstrap, gamma, lambda);
        self.advantages = a;
        self.returns = r;
    }

    pub fn is_ready(&self) -> bool {
        !self.is_empty() && self.advantages.len() == self.len()
    }
}

/// Rescales to zero mean and unit sample standard deviation; left unchanged
/// when the standard deviation is below 1e-8 or there is a single entry.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len();
    if n < 2 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n as f64;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    if std < 1e-8 {
        return;
    }
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

/// Which policy objective a minibatch gradient is taken of.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surrogate {
    /// `-min(rho A, clip(rho, 1 - eps, 1 + eps) A)`; no clipping when `None`.
    Ppo { clip: Option<f64> },
    /// `-log pi(a|x) A`.
    A2c,
}

/// True where the clipped surrogate is flat in the ratio.
pub fn clip_active(ratio: f64, advantage: f64, eps: f64) -> bool {
    (advantage > 0.0 && ratio > 1.0 + eps) || (advantage < 0.0 && ratio < 1.0 - eps)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Loss over the samples `idx` of the buffer and its gradient, accumulated
/// into `grad` (which the caller zeroes). Losses are means over the batch.
pub fn loss_and_grad<N: ActorCritic>(
    net: &N,
    buf: &RolloutBuffer,
    idx: &[usize],
    surrogate: Surrogate,
    vf_coef: f64,
    normalize: bool,
    grad: &mut [f64],
) -> LossStats {
    assert!(buf.is_ready(), "advantages must be computed before an update");
    let b = idx.len() as f64;
    let mut adv: Vec<f64> = idx.iter().map(|&i| buf.advantages[i]).collect();
    if normalize {
        normalize_advantages(&mut adv);
    }
    let log_std = net.log_std();
    let ls_off = net.log_std_offset();
    let raw_ls: Vec<f64> = net.params()[ls_off..ls_off + net.action_dim()].to_vec();
    let mut stats = LossStats::default();
    let mut d_mean = vec![0.0; net.action_dim()];
    for (k, &i) in idx.iter().enumerate() {
        let fwd = net.forward(&buf.observations[i], buf.contexts[i]);
        let a = &buf.actions[i];
        let lp = gaussian_log_prob(&fwd.mean, &log_std, a);
        let ratio = (lp - buf.log_probs[i]).exp();
        let ak = adv[k];

        // d(loss)/d(log pi) for this sample.
        let d_lp = match surrogate {
            Surrogate::Ppo { clip } => {
                let (surr, active) = match clip {
                    Some(eps) => {
                        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
                        stats.clip_fraction += ((ratio - 1.0).abs() > eps) as u8 as f64;
                        ((ratio * ak).min(clipped * ak), clip_active(ratio, ak, eps))
                    }
                    None => (ratio * ak, false),
                };
                stats.policy_loss -= surr;
                if active {
                    0.0
                } else {
                    -ak * ratio
                }
            }
            Surrogate::A2c => {
                stats.policy_loss -= lp * ak;
                -ak
            }
        };
        stats.approx_kl += (ratio - 1.0) - (lp - buf.log_probs[i]);
        let err = fwd.value - buf.returns[i];
        stats.value_loss += err * err;

        let d_lp = d_lp / b;
        for j in 0..d_mean.len() {
            let s2 = (2.0 * log_std[j]).exp();
            let diff = a[j] - fwd.mean[j];
            d_mean[j] = d_lp * diff / s2;
            if raw_ls[j] > LOG_STD_MIN && raw_ls[j] < LOG_STD_MAX {
                grad[ls_off + j] += d_lp * (diff * diff / s2 - 1.0);
            }
        }
        net.backward(&fwd, &d_mean, 2.0 * vf_coef * err / b, grad);
    }
    stats.policy_loss /= b;
    stats.value_loss /= b;
    stats.clip_fraction /= b;
    stats.approx_kl /= b;
    stats
}

/// Total loss `policy + vf_coef * value` for the given samples.
pub fn total_loss<N: ActorCritic>(
    net: &N,
    buf: &RolloutBuffer,
    idx: &[usize],
    surrogate: Surrogate,
    vf_coef: f64,
    normalize: bool,
) -> f64 {
    let mut scratch = vec![0.0; net.n_params()];
    let s = loss_and_grad(net, buf, idx, surrogate, vf_coef, normalize, &mut scratch);
    s.policy_loss + vf_coef * s.value_loss
}

/// Adam with bias correction, as in the common deep-learning libraries.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Scales `grad` so its global L2 norm is at most `max_norm` (factor
/// `max_norm / (norm + 1e-6)` when it exceeds it). Returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let coef = max_norm / (norm + 1e-6);
    if coef < 1.0 {
        for g in grad.iter_mut() {
            *g *= coef;
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub gradient_steps: usize,
}

fn gradient_step<N: ActorCritic>(
    net: &mut N,
    buf: &RolloutBuffer,
    idx: &[usize],
    surrogate: Surrogate,
    cfg: &TrainConfig,
    opt: &mut Adam,
    grad: &mut Vec<f64>,
) -> Result<(LossStats, f64)> {
    grad.clear();
    grad.resize(net.n_params(), 0.0);
    let s = loss_and_grad(net, buf, idx, surrogate, cfg.vf_coef, cfg.normalize_advantage, grad);
    if !(s.policy_loss.is_finite() && s.value_loss.is_finite()) || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite loss or gradient (policy loss {}, value loss {}, approx kl {}); update aborted",
            s.policy_loss, s.value_loss, s.approx_kl
        )));
    }
    let norm = clip_grad_norm(grad, cfg.max_grad_norm);
    opt.step(net.params_mut(), grad);
    Ok((s, norm))
}

fn accumulate(total: &mut UpdateStats, s: &LossStats, norm: f64) {
    total.policy_loss += s.policy_loss;
    total.value_loss += s.value_loss;
    total.clip_fraction += s.clip_fraction;
    total.approx_kl += s.approx_kl;
    total.grad_norm += norm;
    total.gradient_steps += 1;
}

fn averaged(mut t: UpdateStats) -> UpdateStats {
    let n = t.gradient_steps.max(1) as f64;
    t.policy_loss /= n;
    t.value_loss /= n;
    t.clip_fraction /= n;
    t.approx_kl /= n;
    t.grad_norm /= n;
    t
}

/// Clipped PPO: `effective_epochs` passes over shuffled minibatches.
/// Diagnostics are averaged over all minibatches.
pub fn ppo_update<N: ActorCritic, R: Rng + ?Sized>(
    net: &mut N,
    buf: &RolloutBuffer,
    cfg: &TrainConfig,
    opt: &mut Adam,
    rng: &mut R,
) -> Result<UpdateStats> {
    let surrogate = Surrogate::Ppo { clip: cfg.clipping_enabled.then_some(cfg.clip_range) };
    let mut idx: Vec<usize> = (0..buf.len()).collect();
    let mut total = UpdateStats::default();
    let mut grad = Vec::new();
    for _ in 0..cfg.effective_epochs() {
        idx.shuffle(rng);
        for batch in idx.chunks(cfg.batch_size) {
            let (s, norm) = gradient_step(net, buf, batch, surrogate, cfg, opt, &mut grad)?;
            accumulate(&mut total, &s, norm);
        }
    }
    Ok(averaged(total))
}

/// A2C: one gradient step on the whole rollout.
pub fn a2c_update<N: ActorCritic>(
    net: &mut N,
    buf: &RolloutBuffer,
    cfg: &TrainConfig,
    opt: &mut Adam,
) -> Result<UpdateStats> {
    let idx: Vec<usize> = (0..buf.len()).collect();
    let mut total = UpdateStats::default();
    let (s, norm) = gradient_step(net, buf, &idx, Surrogate::A2c, cfg, opt, &mut Vec::new())?;
    accumulate(&mut total, &s, norm);
    Ok(averaged(total))
}
