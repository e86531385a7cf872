//! Ball free flight: gravity, quadratic drag and Magnus lift, integrated with
//! a fixed-step semi-implicit Euler scheme.
//!
//! The acceleration law is
//!
//! ```text
//! a = g - k_d |v| v + k_m (w x v)
//! ```
//!
//! where `k_d` (1/m) and `k_m` (s, per unit spin) absorb air density, ball
//! cross-section and the lift slope. Spin is preserved in free flight unless
//! [`FlightModel::spin_decay`] is set.

use serde::{Deserialize, Serialize};

use crate::rally::TableGeometry;
use crate::Vec3;

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.81;

/// Default physics step, s.
pub const DEFAULT_DT: f64 = 1.0 / 360.0;

/// Position, linear velocity and angular velocity of the ball (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallState {
    pub p: Vec3,
    pub v: Vec3,
    pub w: Vec3,
}

impl BallState {
    pub fn new(p: Vec3, v: Vec3, w: Vec3) -> Self {
        Self { p, v, w }
    }

    pub fn at_rest(p: Vec3) -> Self {
        Self::new(p, Vec3::zeros(), Vec3::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).chain(self.w.iter()).all(|x| x.is_finite())
    }

    /// Component-wise linear interpolation between two states.
    pub fn lerp(&self, other: &BallState, alpha: f64) -> BallState {
        BallState {
            p: self.p + (other.p - self.p) * alpha,
            v: self.v + (other.v - self.v) * alpha,
            w: self.w + (other.w - self.w) * alpha,
        }
    }

    /// Translational plus rotational kinetic energy.
    pub fn kinetic_energy(&self, props: &BallProperties) -> f64 {
        0.5 * props.mass * self.v.norm_squared() + 0.5 * props.inertia * self.w.norm_squared()
    }
}

/// Per-trajectory aerodynamic coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeroCoefficients {
    /// Quadratic drag coefficient, 1/m.
    pub k_d: f64,
    /// Magnus coefficient scaling `w x v` to an acceleration.
    pub k_m: f64,
}

impl AeroCoefficients {
    pub const NONE: AeroCoefficients = AeroCoefficients { k_d: 0.0, k_m: 0.0 };

    pub fn new(k_d: f64, k_m: f64) -> Self {
        Self { k_d, k_m }
    }

    pub fn is_valid(&self) -> bool {
        self.k_d >= 0.0 && self.k_m >= 0.0 && self.k_d.is_finite() && self.k_m.is_finite()
    }
}

/// Mass properties of the ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallProperties {
    /// kg
    pub mass: f64,
    /// m
    pub radius: f64,
    /// kg·m²
    pub inertia: f64,
}

impl BallProperties {
    /// Thin hollow sphere: `I = 2/3 m r²`.
    pub fn hollow_sphere(mass: f64, radius: f64) -> Self {
        Self { mass, radius, inertia: 2.0 / 3.0 * mass * radius * radius }
    }
}

impl Default for BallProperties {
    /// 40 mm, 2.7 g competition ball.
    fn default() -> Self {
        Self::hollow_sphere(2.7e-3, 0.02)
    }
}

/// Acceleration acting on a ball in free flight.
pub fn aero_accel(s: &BallState, a: &AeroCoefficients, g: &Vec3) -> Vec3 {
    let speed = s.v.norm();
    g - s.v * (a.k_d * speed) + s.w.cross(&s.v) * a.k_m
}

/// Integrator settings shared by every flight computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlightModel {
    pub gravity: Vec3,
    /// Exponential spin decay rate, 1/s. `None` keeps spin constant.
    pub spin_decay: Option<f64>,
    /// Spin magnitude cap, rad/s.
    pub w_max: f64,
}

impl Default for FlightModel {
    fn default() -> Self {
        Self { gravity: Vec3::new(0.0, 0.0, -GRAVITY), spin_decay: None, w_max: 600.0 }
    }
}

impl FlightModel {
    /// One semi-implicit Euler step: velocity first, then position with the
    /// updated velocity.
    pub fn step(&self, s: &BallState, a: &AeroCoefficients, dt: f64) -> BallState {
        if dt == 0.0 {
            return *s;
        }
        let acc = aero_accel(s, a, &self.gravity);
        let v = s.v + acc * dt;
        let p = s.p + v * dt;
        let mut w = match self.spin_decay {
            Some(rate) => s.w * (-rate * dt).exp(),
            None => s.w,
        };
        let wn = w.norm();
        if wn > self.w_max {
            w *= self.w_max / wn;
        }
        BallState { p, v, w }
    }

    /// Integrates until the ball meets a surface or `t_max` elapses.
    pub fn simulate_flight(
        &self,
        s: &BallState,
        a: &AeroCoefficients,
        dt: f64,
        t_max: f64,
        geom: &TableGeometry,
        radius: f64,
    ) -> Flight {
        assert!(dt > 0.0 && t_max > 0.0, "simulate_flight needs dt > 0 and t_max > 0");
        let n_steps = (t_max / dt).ceil() as usize;
        let mut samples = Vec::with_capacity(n_steps + 1);
        samples.push((0.0, *s));
        let mut cur = *s;
        for i in 0..n_steps {
            let t0 = i as f64 * dt;
            let next = self.step(&cur, a, dt);
            if let Some(hit) = detect_surface(&cur, &next, t0, dt, geom, radius) {
                return Flight { samples, hit: Some(hit) };
            }
            samples.push((t0 + dt, next));
            cur = next;
        }
        Flight { samples, hit: None }
    }
}

/// Convenience wrapper around [`FlightModel::step`] with default gravity.
pub fn step_ball(s: &BallState, a: &AeroCoefficients, dt: f64) -> BallState {
    FlightModel::default().step(s, a, dt)
}

/// Surfaces a free-flying ball can meet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Surface {
    Table,
    /// The vertical plane `x = 0`; whether the ball clears the net is a
    /// classification question for the rally module.
    NetPlane,
    Floor,
}

/// First surface crossing within an integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub surface: Surface,
    /// Linearly interpolated crossing time.
    pub time: f64,
    /// Interpolated state at the crossing.
    pub state: BallState,
    /// States bracketing the crossing step.
    pub before: BallState,
    pub after: BallState,
    /// Time of `after`.
    pub t_after: f64,
}

#[derive(Debug, Clone)]
pub struct Flight {
    /// `(t, state)` for every completed step, starting at t = 0.
    pub samples: Vec<(f64, BallState)>,
    pub hit: Option<SurfaceHit>,
}

/// Fraction in `[0, 1]` at which `a -> b` crosses `level` going downward.
fn downward_crossing(a: f64, b: f64, level: f64) -> Option<f64> {
    if a >= level && b < level {
        Some((a - level) / (a - b))
    } else {
        None
    }
}

/// Checks a single step `before -> after` for surface crossings and returns
/// the earliest one.
pub fn detect_surface(
    before: &BallState,
    after: &BallState,
    t0: f64,
    dt: f64,
    geom: &TableGeometry,
    radius: f64,
) -> Option<SurfaceHit> {
    let mut best: Option<(f64, Surface)> = None;
    let mut consider = |alpha: f64, surface: Surface| {
        if best.is_none_or(|(b, _)| alpha < b) {
            best = Some((alpha, surface));
        }
    };

    if let Some(alpha) = downward_crossing(before.p.z - radius, after.p.z - radius, geom.height) {
        let at = before.lerp(after, alpha);
        if geom.over_table(at.p.x, at.p.y) {
            consider(alpha, Surface::Table);
        }
    }
    let (x0, x1) = (before.p.x, after.p.x);
    if (x0 > 0.0 && x1 <= 0.0) || (x0 < 0.0 && x1 >= 0.0) {
        consider(x0 / (x0 - x1), Surface::NetPlane);
    }
    if let Some(alpha) = downward_crossing(before.p.z - radius, after.p.z - radius, 0.0) {
        consider(alpha, Surface::Floor);
    }

    best.map(|(alpha, surface)| SurfaceHit {
        surface,
        time: t0 + alpha * dt,
        state: before.lerp(after, alpha),
        before: *before,
        after: *after,
        t_after: t0 + dt,
    })
}

/// Classic RK4 step of the same flight ODE. Used as a high-resolution
/// reference for the production integrator.
pub fn rk4_step(s: &BallState, a: &AeroCoefficients, g: &Vec3, dt: f64) -> BallState {
    let deriv = |p: Vec3, v: Vec3| -> (Vec3, Vec3) {
        let st = BallState { p, v, w: s.w };
        (v, aero_accel(&st, a, g))
    };
    let (k1p, k1v) = deriv(s.p, s.v);
    let (k2p, k2v) = deriv(s.p + k1p * (dt / 2.0), s.v + k1v * (dt / 2.0));
    let (k3p, k3v) = deriv(s.p + k2p * (dt / 2.0), s.v + k2v * (dt / 2.0));
    let (k4p, k4v) = deriv(s.p + k3p * dt, s.v + k3v * dt);
    BallState {
        p: s.p + (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (dt / 6.0),
        v: s.v + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0),
        w: s.w,
    }
}
