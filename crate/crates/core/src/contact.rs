//! Impulse contact between a spinning ball and a plane (table or racket).
//!
//! The normal impulse reflects the approach velocity with restitution
//! `e_n`. Tangentially, Coulomb friction acts on the contact-point slip
//! `s_c = v_t + w x (-r n)`: if the friction budget `mu_s J_n` can stop the
//! slip the contact sticks, otherwise a full sliding impulse opposes it. The
//! friction impulse also applies a torque about the ball center, so
//!
//! ```text
//! w' = w + J_ang / I
//! ```
//!
//! Every resolution returns an [`ImpulseRecord`] carrying the linear and
//! angular impulses and the energy each dissipative channel absorbed, which
//! closes the energy and momentum balances checked by
//! [`verify_conservation`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{BallProperties, BallState};
use crate::Vec3;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum ContactError {
    #[error("ball is not approaching the surface (relative normal velocity {0:.6} m/s)")]
    NotApproaching(f64),
    #[error("contact point lies {distance:.4} m from the racket center (radius {radius:.4} m)")]
    OutsideRacket { distance: f64, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactParams {
    /// Normal restitution, `0 < e_n <= 1`.
    pub e_n: f64,
    /// Sliding friction coefficient.
    pub mu_s: f64,
    /// Rolling friction coefficient. Reserved; not used by the impulse model.
    #[serde(default)]
    pub mu_r: f64,
}

impl ContactParams {
    pub const TABLE: ContactParams = ContactParams { e_n: 0.93, mu_s: 0.25, mu_r: 0.0 };
    pub const RACKET: ContactParams = ContactParams { e_n: 0.82, mu_s: 0.6, mu_r: 0.0 };

    pub fn is_valid(&self) -> bool {
        self.e_n > 0.0 && self.e_n <= 1.0 && self.mu_s >= 0.0 && self.mu_r >= 0.0
    }
}

/// Impulses and dissipated energies of one contact. Energies are measured in
/// the rest frame of the surface.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImpulseRecord {
    /// Total linear impulse on the ball (normal reaction plus friction), N·s.
    pub j_lin: Vec3,
    /// Angular impulse about the ball center, N·m·s.
    pub j_ang: Vec3,
    /// Energy absorbed by the contact force along its path: restitution loss
    /// plus Coulomb slip dissipation, J.
    pub w_f: f64,
    /// Energy absorbed by rolling-resistance torque, J. Zero while `mu_r` is
    /// reserved.
    pub w_m: f64,
}

/// A contact plane. `surface_velocity` is zero for the table and the
/// racket's linear velocity for a hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFrame {
    pub origin: Vec3,
    pub normal: Vec3,
    pub surface_velocity: Vec3,
}

impl SurfaceFrame {
    pub fn new(origin: Vec3, normal: Vec3, surface_velocity: Vec3) -> Self {
        Self { origin, normal: normal.normalize(), surface_velocity }
    }

    pub fn fixed(origin: Vec3, normal: Vec3) -> Self {
        Self::new(origin, normal, Vec3::zeros())
    }

    /// Upward-facing plane at table height.
    pub fn table(height: f64) -> Self {
        Self::fixed(Vec3::new(0.0, 0.0, height), Vec3::z())
    }
}

/// A racket face: a disk of `radius` lying in `frame`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RacketFace {
    pub frame: SurfaceFrame,
    pub radius: f64,
}

/// Expresses a ball state in the rest frame of `frame`.
pub fn in_surface_frame(s: &BallState, frame: &SurfaceFrame) -> BallState {
    BallState { p: s.p, v: s.v - frame.surface_velocity, w: s.w }
}

/// Resolves a ball–plane impact. A moving plane is handled by solving the
/// impact in its rest frame and shifting the result back.
pub fn resolve_bounce(
    s: &BallState,
    frame: &SurfaceFrame,
    cp: &ContactParams,
    props: &BallProperties,
) -> Result<(BallState, ImpulseRecord), ContactError> {
    let n = frame.normal;
    let m = props.mass;
    let r = props.radius;
    let v_rel = s.v - frame.surface_velocity;
    let v_n = v_rel.dot(&n);
    if !(v_n < 0.0) {
        return Err(ContactError::NotApproaching(v_n));
    }
    let v_t = v_rel - n * v_n;

    // Normal impulse magnitude along +n.
    let j_n = -(1.0 + cp.e_n) * m * v_n;

    let arm = -n * r;
    let slip = v_t + s.w.cross(&arm);
    let slip_mag = slip.norm();
    // Impulse that exactly arrests the slip: `slip / (1/m + r²/I)`.
    let stick_impulse = slip_mag / (1.0 / m + r * r / props.inertia);
    let j_t = if slip_mag == 0.0 {
        Vec3::zeros()
    } else if cp.mu_s * j_n >= stick_impulse {
        -slip * (stick_impulse / slip_mag)
    } else {
        -slip * (cp.mu_s * j_n / slip_mag)
    };

    let j_ang = arm.cross(&j_t);
    let v_rel_out = (v_t + j_t / m) - n * (cp.e_n * v_n);
    let v_out = v_rel_out + frame.surface_velocity;
    let w_out = s.w + j_ang / props.inertia;

    let slip_out = (v_t + j_t / m) + w_out.cross(&arm);
    let restitution_loss = 0.5 * m * v_n * v_n * (1.0 - cp.e_n * cp.e_n);
    let slip_dissipation = -j_t.dot(&(slip + slip_out)) * 0.5;

    let record = ImpulseRecord { j_lin: n * j_n + j_t, j_ang, w_f: restitution_loss + slip_dissipation, w_m: 0.0 };
    Ok((BallState { p: s.p, v: v_out, w: w_out }, record))
}

/// Ball–racket impact. The racket is treated as infinitely massive for the
/// duration of the impulse.
pub fn resolve_racket_hit(
    s: &BallState,
    racket: &RacketFace,
    cp: &ContactParams,
    props: &BallProperties,
) -> Result<(BallState, ImpulseRecord), ContactError> {
    let n = racket.frame.normal;
    let offset = s.p - racket.frame.origin;
    let in_plane = offset - n * offset.dot(&n);
    let distance = in_plane.norm();
    if distance > racket.radius {
        return Err(ContactError::OutsideRacket { distance, radius: racket.radius });
    }
    resolve_bounce(s, &racket.frame, cp, props)
}

/// Energy and momentum balance of a contact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    /// `ΔKE_lin + ΔKE_rot + W_f + W_m`, J.
    pub energy: f64,
    /// `m Δv - J_lin`, N·s.
    pub momentum: Vec3,
}

impl Residuals {
    /// Momentum residual projected onto the plane orthogonal to `normal`.
    pub fn tangential_momentum(&self, normal: &Vec3) -> Vec3 {
        self.momentum - normal * self.momentum.dot(normal)
    }
}

/// For a moving surface, pass states expressed with [`in_surface_frame`].
pub fn verify_conservation(pre: &BallState, post: &BallState, rec: &ImpulseRecord, props: &BallProperties) -> Residuals {
    let d_lin = 0.5 * props.mass * (post.v.norm_squared() - pre.v.norm_squared());
    let d_rot = 0.5 * props.inertia * (post.w.norm_squared() - pre.w.norm_squared());
    Residuals {
        energy: d_lin + d_rot + rec.w_f + rec.w_m,
        momentum: (post.v - pre.v) * props.mass - rec.j_lin,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ball(v: Vec3, w: Vec3) -> BallState {
        BallState::new(Vec3::new(-0.5, 0.1, 0.78), v, w)
    }

    fn table() -> SurfaceFrame {
        SurfaceFrame::table(0.76)
    }

    #[test]
    fn head_on_no_spin() {
        let props = BallProperties::default();
        let cp = ContactParams { e_n: 0.9, mu_s: 0.25, mu_r: 0.0 };
        let (out, rec) = resolve_bounce(&ball(Vec3::new(0.0, 0.0, -2.0), Vec3::zeros()), &table(), &cp, &props).unwrap();
        assert_abs_diff_eq!(out.v, Vec3::new(0.0, 0.0, 1.8), epsilon = 1e-12);
        assert_eq!(out.w, Vec3::zeros());
        assert_eq!(rec.j_ang, Vec3::zeros());
    }

    #[test]
    fn heavy_backspin_reverses_tangential_velocity() {
        let props = BallProperties { mass: 2.7e-3, radius: 0.02, inertia: 7.2e-7 };
        let cp = ContactParams { e_n: 0.9, mu_s: 0.9, mu_r: 0.0 };
        let pre = ball(Vec3::new(2.0, 0.0, -2.0), Vec3::new(0.0, -300.0, 0.0));
        let (out, _) = resolve_bounce(&pre, &table(), &cp, &props).unwrap();
        assert_abs_diff_eq!(out.v, Vec3::new(-1.2, 0.0, 1.8), epsilon = 1e-9);
        assert_abs_diff_eq!(out.w, Vec3::new(0.0, -60.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn sliding_case_hand_values() {
        let props = BallProperties { mass: 2.7e-3, radius: 0.02, inertia: 7.2e-7 };
        let cp = ContactParams { e_n: 0.9, mu_s: 0.25, mu_r: 0.0 };
        let pre = ball(Vec3::new(2.0, 0.0, -2.0), Vec3::new(0.0, -300.0, 0.0));
        let (out, _) = resolve_bounce(&pre, &table(), &cp, &props).unwrap();
        assert_abs_diff_eq!(out.v.x, 1.05, epsilon = 1e-9);
        assert_abs_diff_eq!(out.w.y, -228.75, epsilon = 1e-9);
    }

    #[test]
    fn topspin_speeds_the_ball_up() {
        let props = BallProperties::default();
        let cp = ContactParams::TABLE;
        let vx = 3.0;
        let rolling = vx / props.radius;
        for k in 1..=20 {
            let wy = rolling * (1.0 + 0.1 * k as f64);
            let pre = ball(Vec3::new(vx, 0.0, -2.0), Vec3::new(0.0, wy, 0.0));
            let (out, _) = resolve_bounce(&pre, &table(), &cp, &props).unwrap();
            assert!(out.v.x > vx, "w_y = {wy}: v_x' = {}", out.v.x);
        }
    }

    #[test]
    fn receding_ball_is_rejected() {
        let props = BallProperties::default();
        let err = resolve_bounce(&ball(Vec3::new(1.0, 0.0, 0.5), Vec3::zeros()), &table(), &ContactParams::TABLE, &props);
        assert!(matches!(err, Err(ContactError::NotApproaching(_))));
    }

    #[test]
    fn static_and_moving_racket() {
        let props = BallProperties::default();
        let cp = ContactParams { e_n: 0.8, mu_s: 0.6, mu_r: 0.0 };
        let s = BallState::new(Vec3::new(1.0, 0.0, 1.0), Vec3::new(3.0, 0.0, 0.0), Vec3::zeros());
        let face = |u: Vec3| RacketFace {
            frame: SurfaceFrame::new(Vec3::new(1.02, 0.0, 1.0), Vec3::new(-1.0, 0.0, 0.0), u),
            radius: 0.085,
        };
        let (out, _) = resolve_racket_hit(&s, &face(Vec3::zeros()), &cp, &props).unwrap();
        assert_abs_diff_eq!(out.v, Vec3::new(-2.4, 0.0, 0.0), epsilon = 1e-12);
        let (out, _) = resolve_racket_hit(&s, &face(Vec3::new(-1.0, 0.0, 0.0)), &cp, &props).unwrap();
        assert_abs_diff_eq!(out.v, Vec3::new(-4.2, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn racket_miss_outside_disk() {
        let props = BallProperties::default();
        let s = BallState::new(Vec3::new(1.0, 0.2, 1.0), Vec3::new(3.0, 0.0, 0.0), Vec3::zeros());
        let face = RacketFace { frame: SurfaceFrame::fixed(Vec3::new(1.02, 0.0, 1.0), -Vec3::x()), radius: 0.085 };
        let err = resolve_racket_hit(&s, &face, &ContactParams::RACKET, &props);
        assert!(matches!(err, Err(ContactError::OutsideRacket { .. })));
    }

    #[test]
    fn conservation_closes_for_hand_example() {
        let props = BallProperties { mass: 2.7e-3, radius: 0.02, inertia: 7.2e-7 };
        let cp = ContactParams { e_n: 0.9, mu_s: 0.9, mu_r: 0.0 };
        let pre = ball(Vec3::new(2.0, 0.0, -2.0), Vec3::new(0.0, -300.0, 0.0));
        let (post, rec) = resolve_bounce(&pre, &table(), &cp, &props).unwrap();
        let res = verify_conservation(&pre, &post, &rec, &props);
        assert!(res.energy.abs() <= 1e-9, "{}", res.energy);
        assert!(rec.w_f >= 0.0 && rec.w_m >= 0.0);
    }

    #[test]
    fn elastic_frictionless_collision_has_zero_residuals() {
        let props = BallProperties::default();
        let cp = ContactParams { e_n: 1.0, mu_s: 0.0, mu_r: 0.0 };
        let pre = ball(Vec3::new(0.0, 0.0, -3.0), Vec3::zeros());
        let (post, rec) = resolve_bounce(&pre, &table(), &cp, &props).unwrap();
        let res = verify_conservation(&pre, &post, &rec, &props);
        assert_eq!(res.energy, 0.0);
        assert_eq!(res.momentum, Vec3::zeros());
    }
}
