//! Clipped-surrogate policy optimisation over a collected dataset.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::{gaussian_entropy, gaussian_log_prob, PolicyNet};
use super::LearnerError;
use crate::exec::Exec;

/// Samples per gradient chunk. Fixed so summation order never depends on the
/// worker count.
const GRAD_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Minibatches per pass over the dataset.
    pub minibatches: usize,
    /// Passes over the dataset per update.
    pub mini_epochs: usize,
    pub adam_eps: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            learning_rate: 3e-4,
            entropy_coef: 0.003,
            value_coef: 0.5,
            max_grad_norm: 1.0,
            minibatches: 4,
            mini_epochs: 4,
            adam_eps: 1e-8,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !(unit(self.gamma) && unit(self.lambda)) {
            return Err("gamma and lambda must lie in (0, 1]".into());
        }
        if !(self.clip > 0.0 && self.learning_rate > 0.0 && self.max_grad_norm > 0.0 && self.adam_eps > 0.0) {
            return Err("clip, learning_rate, max_grad_norm and adam_eps must be positive".into());
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return Err("loss coefficients must be non-negative".into());
        }
        if self.minibatches == 0 || self.mini_epochs == 0 {
            return Err("minibatches and mini_epochs must be at least 1".into());
        }
        Ok(())
    }
}

/// Flat training data. Observations are stored already normalised.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub obs: Vec<f64>,
    /// Raw (unclamped) sampled actions.
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Dataset {
    pub fn new(obs_dim: usize, act_dim: usize) -> Self {
        Self { obs_dim, act_dim, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn obs(&self, i: usize) -> &[f64] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.act_dim..(i + 1) * self.act_dim]
    }

    pub fn push(&mut self, obs: &[f64], action: &[f64], log_prob: f64, advantage: f64, ret: f64) {
        self.obs.extend_from_slice(obs);
        self.actions.extend_from_slice(action);
        self.log_probs.push(log_prob);
        self.advantages.push(advantage);
        self.returns.push(ret);
    }

    /// Rescales advantages to zero mean and unit variance.
    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len() as f64;
        if n < 2.0 {
            return;
        }
        let mean = self.advantages.iter().sum::<f64>() / n;
        let var = self.advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-8);
        for a in &mut self.advantages {
            *a = (*a - mean) / std;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    /// Mean of `(r - 1) - ln r`, a non-negative KL estimate.
    pub kl: f64,
    pub clip_fraction: f64,
}

impl LossParts {
    pub fn total(&self, cfg: &PpoConfig) -> f64 {
        self.policy + cfg.value_coef * self.value - cfg.entropy_coef * self.entropy
    }
}

/// Loss over the samples `idx` and its gradient with respect to every
/// parameter.
pub fn loss_and_grad(net: &PolicyNet, data: &Dataset, idx: &[usize], cfg: &PpoConfig, exec: Exec) -> (LossParts, Vec<f64>) {
    let n = idx.len() as f64;
    let log_std = net.log_std().to_vec();
    let inv_var: Vec<f64> = log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();
    let ls_range = net.log_std_range();
    let partials = exec.map_chunks(idx, GRAD_CHUNK, |chunk| {
        let mut g = vec![0.0; net.len()];
        let mut acc = LossParts::default();
        let mut d_mean = vec![0.0; data.act_dim];
        for &i in chunk {
            let (out, cache) = net.forward_cached(data.obs(i));
            let a = data.action(i);
            let adv = data.advantages[i];
            let logp = gaussian_log_prob(a, &out.mean, &log_std);
            let log_ratio = logp - data.log_probs[i];
            let ratio = log_ratio.exp();
            let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
            acc.policy -= (ratio * adv).min(clipped * adv);
            acc.kl += (ratio - 1.0) - log_ratio;
            if (ratio - 1.0).abs() > cfg.clip {
                acc.clip_fraction += 1.0;
            }
            // The clipped branch is flat in the parameters.
            let active = !((adv > 0.0 && ratio > 1.0 + cfg.clip) || (adv < 0.0 && ratio < 1.0 - cfg.clip));
            let d_logp = if active { -adv * ratio / n } else { 0.0 };
            for j in 0..data.act_dim {
                let diff = a[j] - out.mean[j];
                d_mean[j] = d_logp * diff * inv_var[j];
                g[ls_range.start + j] += d_logp * (diff * diff * inv_var[j] - 1.0);
            }
            let err = out.value - data.returns[i];
            acc.value += err * err;
            let d_value = cfg.value_coef * 2.0 * err / n;
            net.backward(&cache, &d_mean, d_value, &mut g);
        }
        (acc, g)
    });
    let mut grad = vec![0.0; net.len()];
    let mut parts = LossParts::default();
    for (acc, g) in partials {
        for (t, v) in grad.iter_mut().zip(&g) {
            *t += v;
        }
        parts.policy += acc.policy;
        parts.value += acc.value;
        parts.kl += acc.kl;
        parts.clip_fraction += acc.clip_fraction;
    }
    parts.policy /= n;
    parts.value /= n;
    parts.kl /= n;
    parts.clip_fraction /= n;
    parts.entropy = gaussian_entropy(&log_std);
    for j in ls_range {
        grad[j] -= cfg.entropy_coef;
    }
    (parts, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize, eps: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Scales `grad` to at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// Runs `mini_epochs` passes of `minibatches` shuffled minibatches. On a
/// non-finite parameter the network is restored to its state before the
/// update and [`LearnerError::DivergedUpdate`] is returned.
pub fn ppo_update<R: Rng>(
    net: &mut PolicyNet,
    adam: &mut Adam,
    data: &Dataset,
    cfg: &PpoConfig,
    lr: f64,
    exec: Exec,
    rng: &mut R,
) -> Result<UpdateStats, LearnerError> {
    if data.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    let backup = (net.params.clone(), adam.clone());
    let mut idx: Vec<usize> = (0..data.len()).collect();
    let per = data.len().div_ceil(cfg.minibatches);
    let mut stats = UpdateStats::default();
    let mut count = 0.0;
    for _ in 0..cfg.mini_epochs {
        idx.shuffle(rng);
        for mb in idx.chunks(per) {
            let (parts, mut grad) = loss_and_grad(net, data, mb, cfg, exec);
            let norm = clip_grad_norm(&mut grad, cfg.max_grad_norm);
            adam.step(&mut net.params, &grad, lr);
            if !net.is_finite() || !parts.kl.is_finite() {
                net.params = backup.0;
                *adam = backup.1;
                return Err(LearnerError::DivergedUpdate);
            }
            stats.policy_loss += parts.policy;
            stats.value_loss += parts.value;
            stats.entropy += parts.entropy;
            stats.kl += parts.kl;
            stats.clip_fraction += parts.clip_fraction;
            stats.grad_norm += norm;
            count += 1.0;
        }
    }
    stats.policy_loss /= count;
    stats.value_loss /= count;
    stats.entropy /= count;
    stats.kl /= count;
    stats.clip_fraction /= count;
    stats.grad_norm /= count;
    Ok(stats)
}
