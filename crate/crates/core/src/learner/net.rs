//! Actor–critic network with dense observation skips.
//!
//! Hidden layer 1 sees the observation; every later hidden layer sees the
//! previous activation concatenated with the observation. The actor mean and
//! critic value heads share the trunk. Log standard deviations are free
//! parameters. Gradients are computed by hand for this fixed architecture.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetArch {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub width: usize,
    pub depth: usize,
}

/// Offsets of every parameter block in the flat vector.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    /// `(weights, biases, fan_in)` per hidden layer.
    hidden: Vec<(usize, usize, usize)>,
    mean_w: usize,
    mean_b: usize,
    value_w: usize,
    value_b: usize,
    log_std: usize,
    total: usize,
}

impl NetArch {
    fn layout(&self) -> Layout {
        let mut at = 0;
        let mut hidden = Vec::with_capacity(self.depth);
        for k in 0..self.depth {
            let fan_in = if k == 0 { self.obs_dim } else { self.width + self.obs_dim };
            hidden.push((at, at + self.width * fan_in, fan_in));
            at += self.width * fan_in + self.width;
        }
        let mean_w = at;
        let mean_b = mean_w + self.act_dim * self.width;
        let value_w = mean_b + self.act_dim;
        let value_b = value_w + self.width;
        let log_std = value_b + 1;
        let total = log_std + self.act_dim;
        Layout { hidden, mean_w, mean_b, value_w, value_b, log_std, total }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    pub fn is_valid(&self) -> bool {
        self.obs_dim > 0 && self.act_dim > 0 && self.width > 0 && self.depth > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    /// Action means in `(-1, 1)`.
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: f64,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    x: Vec<f64>,
    /// Post-activation output of every hidden layer.
    h: Vec<Vec<f64>>,
    mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    arch: NetArch,
    layout_total: usize,
    pub params: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], fan_in: usize, input: &[&[f64]], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * fan_in..(i + 1) * fan_in];
        let mut acc = b[i];
        let mut j = 0;
        for part in input {
            for v in *part {
                acc += row[j] * v;
                j += 1;
            }
        }
        *o = acc;
    }
}

impl PolicyNet {
    pub fn zeros(arch: NetArch) -> Self {
        let total = arch.param_count();
        Self { arch, layout_total: total, params: vec![0.0; total] }
    }

    /// LeCun-normal hidden weights, a small actor head, zero biases.
    pub fn init<R: Rng>(arch: NetArch, init_log_std: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(arch);
        let l = arch.layout();
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut fill = |params: &mut [f64], scale: f64| {
            for p in params {
                *p = unit.sample(rng) * scale;
            }
        };
        for &(w, b, fan_in) in &l.hidden {
            fill(&mut net.params[w..b], 1.0 / (fan_in as f64).sqrt());
        }
        fill(&mut net.params[l.mean_w..l.mean_b], 0.01 / (arch.width as f64).sqrt());
        fill(&mut net.params[l.value_w..l.value_b], 1.0 / (arch.width as f64).sqrt());
        for p in &mut net.params[l.log_std..l.total] {
            *p = init_log_std;
        }
        net
    }

    pub fn from_params(arch: NetArch, params: Vec<f64>) -> Option<Self> {
        (params.len() == arch.param_count()).then(|| Self { arch, layout_total: params.len(), params })
    }

    pub fn arch(&self) -> NetArch {
        self.arch
    }

    pub fn len(&self) -> usize {
        self.layout_total
    }

    pub fn is_empty(&self) -> bool {
        self.layout_total == 0
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Index range of the log standard deviations.
    pub fn log_std_range(&self) -> std::ops::Range<usize> {
        let l = self.arch.layout();
        l.log_std..l.total
    }

    pub fn log_std(&self) -> &[f64] {
        &self.params[self.log_std_range()]
    }

    pub fn forward(&self, x: &[f64]) -> PolicyOutput {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &[f64]) -> (PolicyOutput, ForwardCache) {
        assert_eq!(x.len(), self.arch.obs_dim, "observation length");
        let l = self.arch.layout();
        let p = &self.params;
        let width = self.arch.width;
        let mut h: Vec<Vec<f64>> = Vec::with_capacity(self.arch.depth);
        for (k, &(w, b, fan_in)) in l.hidden.iter().enumerate() {
            let mut out = vec![0.0; width];
            if k == 0 {
                affine(&p[w..b], &p[b..b + width], fan_in, &[x], &mut out);
            } else {
                affine(&p[w..b], &p[b..b + width], fan_in, &[&h[k - 1], x], &mut out);
            }
            for v in &mut out {
                *v = v.tanh();
            }
            h.push(out);
        }
        let last = h.last().expect("depth >= 1");
        let mut mean = vec![0.0; self.arch.act_dim];
        affine(&p[l.mean_w..l.mean_b], &p[l.mean_b..l.value_w], width, &[last], &mut mean);
        for m in &mut mean {
            *m = m.tanh();
        }
        let value = p[l.value_b] + p[l.value_w..l.value_b].iter().zip(last).map(|(w, v)| w * v).sum::<f64>();
        let out = PolicyOutput { mean: mean.clone(), log_std: p[l.log_std..l.total].to_vec(), value };
        (out, ForwardCache { x: x.to_vec(), h, mean })
    }

    /// Accumulates into `grad` the parameter gradient of a loss whose
    /// partials with respect to the (tanh-bounded) mean and the value are
    /// `d_mean` and `d_value`. Log-std partials are added by the caller.
    pub fn backward(&self, cache: &ForwardCache, d_mean: &[f64], d_value: f64, grad: &mut [f64]) {
        let l = self.arch.layout();
        let p = &self.params;
        let width = self.arch.width;
        let last = cache.h.last().expect("depth >= 1");

        // Heads.
        let mut d_h = vec![0.0; width];
        for (i, (dm, m)) in d_mean.iter().zip(&cache.mean).enumerate() {
            let dz = dm * (1.0 - m * m);
            if dz == 0.0 {
                continue;
            }
            grad[l.mean_b + i] += dz;
            let row = l.mean_w + i * width;
            for j in 0..width {
                grad[row + j] += dz * last[j];
                d_h[j] += dz * p[row + j];
            }
        }
        grad[l.value_b] += d_value;
        for j in 0..width {
            grad[l.value_w + j] += d_value * last[j];
            d_h[j] += d_value * p[l.value_w + j];
        }

        // Hidden layers, last to first.
        for k in (0..self.arch.depth).rev() {
            let (w, b, fan_in) = l.hidden[k];
            let h = &cache.h[k];
            let mut d_prev = vec![0.0; if k > 0 { width } else { 0 }];
            for i in 0..width {
                let dz = d_h[i] * (1.0 - h[i] * h[i]);
                if dz == 0.0 {
                    continue;
                }
                grad[b + i] += dz;
                let row = w + i * fan_in;
                if k == 0 {
                    for (j, xv) in cache.x.iter().enumerate() {
                        grad[row + j] += dz * xv;
                    }
                } else {
                    let prev = &cache.h[k - 1];
                    for j in 0..width {
                        grad[row + j] += dz * prev[j];
                        d_prev[j] += dz * p[row + j];
                    }
                    for (j, xv) in cache.x.iter().enumerate() {
                        grad[row + width + j] += dz * xv;
                    }
                }
            }
            d_h = d_prev;
        }
    }
}

/// `ln N(a; mean, exp(log_std))` summed over components.
pub fn gaussian_log_prob(a: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
    a.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) * (-ls).exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

/// Differential entropy of the diagonal Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    const HALF_LN_2PI_E: f64 = 1.418_938_533_204_672_7;
    log_std.iter().map(|ls| ls + HALF_LN_2PI_E).sum()
}

/// Draws a Gaussian action. Returns the raw sample (for the log-prob), the
/// sample clamped to `[-1, 1]` (for the environment) and the log-prob of
/// the raw sample.
pub fn sample_action<R: Rng>(mean: &[f64], log_std: &[f64], rng: &mut R) -> (Vec<f64>, Vec<f64>, f64) {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let raw: Vec<f64> = mean.iter().zip(log_std).map(|(m, ls)| m + ls.exp() * unit.sample(rng)).collect();
    let clamped = raw.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
    let logp = gaussian_log_prob(&raw, mean, log_std);
    (raw, clamped, logp)
}
