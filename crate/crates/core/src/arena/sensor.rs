//! Ball sensing: latency, Gaussian noise and dropped frames.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseLatencyConfig {
    /// Position noise standard deviation, m.
    pub sigma_ball_pos: f64,
    /// Velocity noise standard deviation, m/s.
    pub sigma_ball_vel: f64,
    /// Minimum per-episode delay, control steps.
    pub delay_min: usize,
    /// Maximum per-episode delay, control steps.
    pub delay_max: usize,
    /// Probability that a sample is dropped and the previous one held.
    pub dropout_prob: f64,
}

impl Default for NoiseLatencyConfig {
    fn default() -> Self {
        Self { sigma_ball_pos: 0.002, sigma_ball_vel: 0.05, delay_min: 0, delay_max: 2, dropout_prob: 0.02 }
    }
}

impl NoiseLatencyConfig {
    pub const NONE: NoiseLatencyConfig =
        NoiseLatencyConfig { sigma_ball_pos: 0.0, sigma_ball_vel: 0.0, delay_min: 0, delay_max: 0, dropout_prob: 0.0 };

    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma_ball_pos >= 0.0 && self.sigma_ball_vel >= 0.0) {
            return Err("noise sigmas must be non-negative".into());
        }
        if self.delay_min > self.delay_max {
            return Err("delay_min must not exceed delay_max".into());
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err("dropout_prob must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// A position/velocity pair as seen by the policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallSample {
    pub p: Vec3,
    pub v: Vec3,
}

/// Holds the recent truth stream and the last emitted sample.
#[derive(Debug, Clone)]
pub struct BallSensor {
    history: VecDeque<BallSample>,
    last: Option<BallSample>,
    delay: usize,
}

impl BallSensor {
    pub fn new(delay: usize) -> Self {
        Self { history: VecDeque::with_capacity(delay + 1), last: None, delay }
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    /// Records the current ground truth.
    pub fn push_truth(&mut self, truth: BallSample) {
        if self.history.len() == self.delay + 1 {
            self.history.pop_front();
        }
        self.history.push_back(truth);
    }

    /// Emits the sample for this control step. Returns the sample and whether
    /// it was a held (dropped) frame.
    pub fn sense<R: Rng>(&mut self, cfg: &NoiseLatencyConfig, rng: &mut R) -> (BallSample, bool) {
        let truth = *self.history.front().expect("sense() needs at least one truth sample");
        // Draws happen unconditionally so the random stream does not depend on
        // which branch is taken.
        let drop_draw: f64 = rng.random();
        let noise_p = gaussian3(rng, cfg.sigma_ball_pos);
        let noise_v = gaussian3(rng, cfg.sigma_ball_vel);
        if let Some(last) = self.last {
            if drop_draw < cfg.dropout_prob {
                return (last, true);
            }
        }
        let s = BallSample { p: truth.p + noise_p, v: truth.v + noise_v };
        self.last = Some(s);
        (s, false)
    }
}

fn gaussian3<R: Rng>(rng: &mut R, sigma: f64) -> Vec3 {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let z = Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng));
    z * sigma
}
