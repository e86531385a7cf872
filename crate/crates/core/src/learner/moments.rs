//! Running mean and variance with pairwise merging.

use serde::{Deserialize, Serialize};

/// Pseudo-count restored at a stage boundary.
pub const RESET_COUNT: f64 = 1e4;

const STD_FLOOR: f64 = 1e-6;
const CLIP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningMoments {
    /// Sample count. Fractional after a count reset rescales it.
    pub count: f64,
    pub mean: Vec<f64>,
    /// Sum of squared deviations from the mean.
    pub m2: Vec<f64>,
}

impl RunningMoments {
    pub fn new(dim: usize) -> Self {
        Self { count: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Moments of a single batch, computed in two passes.
    pub fn from_batch<'a>(dim: usize, xs: impl IntoIterator<Item = &'a [f64]> + Clone) -> Self {
        let mut m = Self::new(dim);
        for x in xs.clone() {
            m.count += 1.0;
            for (mu, v) in m.mean.iter_mut().zip(x) {
                *mu += v;
            }
        }
        if m.count == 0.0 {
            return m;
        }
        for mu in &mut m.mean {
            *mu /= m.count;
        }
        for x in xs {
            for ((s, v), mu) in m.m2.iter_mut().zip(x).zip(&m.mean) {
                *s += (v - mu) * (v - mu);
            }
        }
        m
    }

    /// Welford update with one observation.
    pub fn update(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim());
        self.count += 1.0;
        for ((mu, s), v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *mu;
            *mu += d / self.count;
            *s += d * (v - *mu);
        }
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&self, other: &RunningMoments) -> RunningMoments {
        debug_assert_eq!(self.dim(), other.dim());
        if other.count == 0.0 {
            return self.clone();
        }
        if self.count == 0.0 {
            return other.clone();
        }
        let n = self.count + other.count;
        let (wa, wb) = (self.count / n, other.count / n);
        let mut out = Self::new(self.dim());
        out.count = n;
        for i in 0..self.dim() {
            let delta = other.mean[i] - self.mean[i];
            out.mean[i] = self.mean[i] * wa + other.mean[i] * wb;
            out.m2[i] = self.m2[i] + other.m2[i] + delta * delta * self.count * wb;
        }
        out
    }

    /// Population variance.
    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0.0 {
            return vec![0.0; self.dim()];
        }
        self.m2.iter().map(|s| s / self.count).collect()
    }

    pub fn std(&self) -> Vec<f64> {
        self.variance().into_iter().map(f64::sqrt).collect()
    }

    /// `(x - mean) / max(std, 1e-6)` clipped to `±10`; passthrough while
    /// fewer than two samples have been seen.
    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        if self.count < 2.0 {
            out.copy_from_slice(x);
            return;
        }
        for (((o, v), mu), s) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.m2) {
            let std = (s / self.count).sqrt().max(STD_FLOOR);
            *o = ((v - mu) / std).clamp(-CLIP, CLIP);
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.normalize_into(x, &mut out);
        out
    }

    /// Sets the count to [`RESET_COUNT`], rescaling `m2` so mean and
    /// variance are unchanged. An empty accumulator stays empty.
    pub fn reset_count(&mut self) {
        if self.count == 0.0 {
            return;
        }
        let scale = RESET_COUNT / self.count;
        for s in &mut self.m2 {
            *s *= scale;
        }
        self.count = RESET_COUNT;
    }

    pub fn is_finite(&self) -> bool {
        self.count.is_finite() && self.mean.iter().chain(&self.m2).all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn of(xs: &[f64]) -> RunningMoments {
        let mut m = RunningMoments::new(1);
        for x in xs {
            m.update(&[*x]);
        }
        m
    }

    #[test]
    fn merge_example() {
        let m = of(&[1.0, 2.0]).merge(&of(&[3.0, 4.0]));
        assert_eq!(m.count, 4.0);
        assert_eq!(m.mean, vec![2.5]);
        assert!((m.m2[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_is_identity() {
        let x = of(&[1.0, 5.0, 2.0]);
        assert_eq!(RunningMoments::new(1).merge(&x), x);
        assert_eq!(x.merge(&RunningMoments::new(1)), x);
    }

    #[test]
    fn stream_equals_merge() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let whole = of(&xs);
        let split = of(&xs[..17]).merge(&of(&xs[17..]));
        assert!((whole.mean[0] - split.mean[0]).abs() < 1e-12);
        assert!((whole.m2[0] - split.m2[0]).abs() < 1e-12);
    }

    #[test]
    fn normalize_rules() {
        assert_eq!(RunningMoments::new(2).normalize(&[3.0, -4.0]), vec![3.0, -4.0]);
        let c = of(&[2.0; 10]);
        assert_eq!(c.normalize(&[2.0]), vec![0.0]);
        let m = of(&[1.0, 3.0]);
        assert!((m.normalize(&[3.0])[0] - 1.0).abs() < 1e-12);
        assert_eq!(m.normalize(&[1e9])[0], 10.0);
    }

    #[test]
    fn reset_keeps_statistics() {
        let mut m = of(&(0..100).map(f64::from).collect::<Vec<_>>());
        let (mean, var) = (m.mean.clone(), m.variance());
        m.reset_count();
        assert_eq!(m.count, RESET_COUNT);
        assert_eq!(m.mean, mean);
        assert!((m.variance()[0] - var[0]).abs() < 1e-9 * var[0]);
        let mut e = RunningMoments::new(3);
        e.reset_count();
        assert_eq!(e.count, 0.0);
    }
}
