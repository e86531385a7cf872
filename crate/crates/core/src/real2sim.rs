//! Recorded ball trajectories: ingestion, state estimation, aerodynamic
//! fitting and replay against a trained policy.
//!
//! A recording is a CSV file with header `t_ms,x_mm,y_mm,z_mm,present` in
//! the table frame. Dropped frames carry `present = 0`; their coordinates
//! are ignored and reconstructed by [`fill_gaps`].
//!
//! Processing runs in this order: gap completion, splitting at table
//! bounces, smoothing and differentiation per flight segment, then a fit of
//! the drag and Magnus coefficients on the first segment. During replay the
//! ball follows the recorded path until the racket touches it and obeys the
//! simulator's physics with the fitted coefficients afterwards.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arena::{scripted_event, ArenaConfig, EpisodeSummary, RallyEnv, ScriptedBall, TraceRow};
use crate::contact::{resolve_bounce, SurfaceFrame};
use crate::dynamics::{detect_surface, AeroCoefficients, BallState, FlightModel, Surface, DEFAULT_DT};
use crate::learner::Policy;
use crate::rally::{is_valid_rally, EventKind, RallyEvent};
use crate::reward::StageIndex;
use crate::seedgen::RallySeed;
use crate::Vec3;

pub const RECORDING_HEADER: &str = "t_ms,x_mm,y_mm,z_mm,present";

/// Present samples used for gap extrapolation.
const FILL_BASIS: usize = 5;
/// Smallest first segment accepted by the aerodynamic fit.
pub const MIN_FIT_STATES: usize = 12;
/// Speeds below this carry no information about drag or lift, m/s.
const MIN_FIT_SPEED: f64 = 0.1;
/// Height band above the table in which a z minimum counts as a bounce, m.
const BOUNCE_BAND: f64 = 0.03;
/// Vertical speed required on both sides of a bounce, m/s.
const BOUNCE_MIN_VZ: f64 = 0.3;

/// One row of a recording, in file units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordedSample {
    pub t_ms: f64,
    pub p_mm: [f64; 3],
    pub present: bool,
}

impl RecordedSample {
    pub fn new(t_ms: f64, p_mm: [f64; 3]) -> Self {
        Self { t_ms, p_mm, present: true }
    }

    pub fn dropped(t_ms: f64) -> Self {
        Self { t_ms, p_mm: [0.0; 3], present: false }
    }
}

/// A position sample in SI units after gap completion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub t: f64,
    pub p: Vec3,
    /// Reconstructed rather than measured.
    pub filled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatedState {
    pub t: f64,
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
    pub filled: bool,
}

#[derive(Debug, Error)]
pub enum Real2SimError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: timestamp {t_ms} ms does not increase")]
    NonMonotonicTime { line: u64, t_ms: f64 },
    #[error("a dropped frame precedes the first two present samples")]
    LeadingGap,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("velocity is near zero throughout the fit window")]
    IllConditioned,
    #[error("recording is not a valid inbound rally (events: {0})")]
    InvalidInbound(String),
    #[error("smoothing window must be odd and at least 3, got {0}")]
    BadWindow(usize),
}

pub type Result<T> = std::result::Result<T, Real2SimError>;

fn parse_err(line: u64, message: impl Into<String>) -> Real2SimError {
    Real2SimError::Parse { line, message: message.into() }
}

/// Parses a recording. Timestamps must increase strictly across all rows.
pub fn read_recorded<R: Read>(input: R) -> Result<Vec<RecordedSample>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut out = Vec::new();
    let mut header_seen = false;
    let mut prev_t = f64::NEG_INFINITY;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if !header_seen {
            let header: Vec<&str> = rec.iter().map(str::trim).collect();
            if header.join(",") != RECORDING_HEADER {
                return Err(parse_err(line, format!("expected header `{RECORDING_HEADER}`")));
            }
            header_seen = true;
            continue;
        }
        if rec.len() != 5 {
            return Err(parse_err(line, format!("expected 5 fields, got {}", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            let s = rec[i].trim();
            let v: f64 = s.parse().map_err(|_| parse_err(line, format!("bad number `{s}`")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(line, format!("non-finite value `{s}`")))
            }
        };
        let t_ms = num(0)?;
        let present = match rec[4].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            s => return Err(parse_err(line, format!("bad present flag `{s}`"))),
        };
        if t_ms <= prev_t {
            return Err(Real2SimError::NonMonotonicTime { line, t_ms });
        }
        prev_t = t_ms;
        let p_mm = if present { [num(1)?, num(2)?, num(3)?] } else { [0.0; 3] };
        out.push(RecordedSample { t_ms, p_mm, present });
    }
    Ok(out)
}

pub fn load_recorded(path: &Path) -> Result<Vec<RecordedSample>> {
    read_recorded(std::fs::File::open(path)?)
}

pub fn write_recorded<W: Write>(mut out: W, samples: &[RecordedSample]) -> std::io::Result<()> {
    writeln!(out, "{RECORDING_HEADER}")?;
    for s in samples {
        let [x, y, z] = s.p_mm;
        writeln!(out, "{},{},{},{},{}", s.t_ms, x, y, z, u8::from(s.present))?;
    }
    Ok(())
}

/// Least-squares polynomial of degree `min(2, n-1)` through `pts`,
/// evaluated at `t`.
fn extrapolate(pts: &[(f64, Vec3)], t: f64) -> Vec3 {
    let t_ref = pts[pts.len() - 1].0;
    let cols = pts.len().min(3);
    let m = DMatrix::from_fn(pts.len(), cols, |r, c| (pts[r].0 - t_ref).powi(c as i32));
    let svd = m.svd(true, true);
    let tau = t - t_ref;
    let mut p = Vec3::zeros();
    for axis in 0..3 {
        let b = DVector::from_iterator(pts.len(), pts.iter().map(|(_, p)| p[axis]));
        let coef = svd.solve(&b, 1e-14).expect("svd was computed with u and v");
        p[axis] = (0..cols).map(|c| coef[c] * tau.powi(c as i32)).sum();
    }
    p
}

/// Converts to SI units and reconstructs dropped frames by constant
/// acceleration extrapolation from the latest present samples. Present
/// samples pass through unchanged.
pub fn fill_gaps(samples: &[RecordedSample]) -> Result<Vec<TrackPoint>> {
    let mut out = Vec::with_capacity(samples.len());
    let mut basis: Vec<(f64, Vec3)> = Vec::new();
    for s in samples {
        let t = s.t_ms * 1e-3;
        if s.present {
            let p = Vec3::from(s.p_mm) * 1e-3;
            basis.push((t, p));
            out.push(TrackPoint { t, p, filled: false });
            continue;
        }
        if basis.len() < 2 {
            return Err(Real2SimError::LeadingGap);
        }
        let p = extrapolate(&basis[basis.len().saturating_sub(FILL_BASIS)..], t);
        out.push(TrackPoint { t, p, filled: true });
    }
    Ok(out)
}

/// Position smoothing applied before differentiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingFilter {
    /// Centered moving average.
    #[default]
    MovingAverage,
    /// Centered local least-squares quadratic (Savitzky–Golay for uniform
    /// sampling). Leaves quadratic motion untouched.
    LocalQuadratic,
}

fn smooth(points: &[TrackPoint], window: usize, filter: SmoothingFilter) -> Vec<Vec3> {
    let n = points.len();
    let half = window / 2;
    (0..n)
        .map(|i| {
            let m = half.min(i).min(n - 1 - i);
            let span = &points[i - m..=i + m];
            match filter {
                SmoothingFilter::MovingAverage => span.iter().map(|q| q.p).sum::<Vec3>() / span.len() as f64,
                SmoothingFilter::LocalQuadratic if m >= 1 => {
                    let pts: Vec<(f64, Vec3)> = span.iter().map(|q| (q.t, q.p)).collect();
                    extrapolate(&pts, points[i].t)
                }
                SmoothingFilter::LocalQuadratic => points[i].p,
            }
        })
        .collect()
}

/// First and second derivative at `at` of the quadratic through three
/// samples.
fn quadratic_derivatives(t: [f64; 3], p: [Vec3; 3], at: f64) -> (Vec3, Vec3) {
    let f01 = (p[1] - p[0]) / (t[1] - t[0]);
    let f12 = (p[2] - p[1]) / (t[2] - t[1]);
    let f012 = (f12 - f01) / (t[2] - t[0]);
    (f01 + f012 * (2.0 * at - t[0] - t[1]), f012 * 2.0)
}

/// Smooths positions over `window` samples, then differentiates: central
/// differences inside, one-sided three-point differences at both ends.
/// Nonuniform sample spacing is handled exactly.
pub fn estimate_states(points: &[TrackPoint], window: usize, filter: SmoothingFilter) -> Result<Vec<EstimatedState>> {
    if window < 3 || window % 2 == 0 {
        return Err(Real2SimError::BadWindow(window));
    }
    let n = points.len();
    if n < 3 {
        return Err(Real2SimError::TooFewSamples { needed: 3, got: n });
    }
    let p = smooth(points, window, filter);
    Ok((0..n)
        .map(|i| {
            let j = i.clamp(1, n - 2) - 1;
            let t = [points[j].t, points[j + 1].t, points[j + 2].t];
            let (v, a) = quadratic_derivatives(t, [p[j], p[j + 1], p[j + 2]], points[i].t);
            EstimatedState { t: points[i].t, p: p[i], v, a, filled: points[i].filled }
        })
        .collect())
}

/// Splits a track at table bounces: a z minimum within a few centimetres of
/// the table with clear descent before and ascent after. The minimum sample
/// joins whichever side predicts it better.
pub fn split_at_bounces(points: &[TrackPoint], arena: &ArenaConfig) -> Vec<Range<usize>> {
    let g = &arena.geometry;
    let contact_z = g.height + arena.ball.radius;
    let n = points.len();
    let mut cuts = Vec::new();
    let mut i = 2;
    while i + 2 < n {
        let z = |k: usize| points[k].p.z;
        let is_min = (i - 2..=i + 2).all(|k| z(k) >= z(i));
        let descending = (z(i - 2) - z(i)) / (points[i].t - points[i - 2].t) > BOUNCE_MIN_VZ;
        let ascending = (z(i + 2) - z(i)) / (points[i + 2].t - points[i].t) > BOUNCE_MIN_VZ;
        let p = points[i].p;
        if is_min && descending && ascending && g.over_table(p.x, p.y) && (p.z - contact_z).abs() <= BOUNCE_BAND {
            let side_error = |side: &[TrackPoint]| {
                let pts: Vec<(f64, Vec3)> = side.iter().map(|q| (q.t, q.p)).collect();
                (extrapolate(&pts, points[i].t) - p).norm()
            };
            let pre = side_error(&points[i.saturating_sub(3)..i]);
            let post = side_error(&points[i + 1..(i + 4).min(n)]);
            cuts.push(if pre <= post { i + 1 } else { i });
            i += 3;
        } else {
            i += 1;
        }
    }
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(n);
    bounds.windows(2).map(|w| w[0]..w[1]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeroFit {
    pub aero: AeroCoefficients,
    /// RMS acceleration residual of the linear fit, m/s².
    pub accel_rms: f64,
    /// RMS position residual after refinement, m.
    pub position_rms: Option<f64>,
}

fn accel_columns(s: &EstimatedState, spin: &Vec3, g: &Vec3) -> (Vec3, Vec3, Vec3) {
    (-s.v * s.v.norm(), spin.cross(&s.v), s.a - g)
}

/// Linear least squares for `a - g = k_d (-|v| v) + k_m (w × v)` over the
/// interior states, with both coefficients projected onto `>= 0`. A zero
/// `spin` leaves `k_m` unidentifiable; it is pinned to 0.
pub fn fit_aero(states: &[EstimatedState], spin: Vec3, gravity: Vec3) -> Result<AeroFit> {
    if states.len() < MIN_FIT_STATES {
        return Err(Real2SimError::TooFewSamples { needed: MIN_FIT_STATES, got: states.len() });
    }
    let inner = &states[1..states.len() - 1];
    if inner.iter().all(|s| s.v.norm() < MIN_FIT_SPEED) {
        return Err(Real2SimError::IllConditioned);
    }
    let (mut a11, mut a12, mut a22, mut b1, mut b2, mut yy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for s in inner {
        let (c1, c2, y) = accel_columns(s, &spin, &gravity);
        a11 += c1.dot(&c1);
        a12 += c1.dot(&c2);
        a22 += c2.dot(&c2);
        b1 += c1.dot(&y);
        b2 += c2.dot(&y);
        yy += y.dot(&y);
    }
    // Sum of squared residuals for a candidate, from the normal equations.
    let sse = |kd: f64, km: f64| (yy - 2.0 * (kd * b1 + km * b2) + kd * kd * a11 + 2.0 * kd * km * a12 + km * km * a22).max(0.0);
    let mut candidates = vec![(0.0, 0.0), ((b1 / a11).max(0.0), 0.0)];
    if spin.norm() > 0.0 && a22 > 0.0 {
        candidates.push((0.0, (b2 / a22).max(0.0)));
        let det = a11 * a22 - a12 * a12;
        if det > 1e-12 * a11 * a22 {
            let kd = (b1 * a22 - b2 * a12) / det;
            let km = (a11 * b2 - a12 * b1) / det;
            if kd >= 0.0 && km >= 0.0 {
                candidates.push((kd, km));
            }
        }
    }
    let (kd, km) = candidates.into_iter().min_by(|x, y| sse(x.0, x.1).total_cmp(&sse(y.0, y.1))).expect("non-empty");
    Ok(AeroFit { aero: AeroCoefficients::new(kd, km), accel_rms: (sse(kd, km) / inner.len() as f64).sqrt(), position_rms: None })
}

/// Flies `start` through the sample times of `points` with the simulator's
/// integrator, sub-stepping so no step exceeds the physics step.
fn simulate_positions(start: &BallState, aero: &AeroCoefficients, flight: &FlightModel, points: &[TrackPoint]) -> Vec<Vec3> {
    let mut s = *start;
    let mut out = Vec::with_capacity(points.len());
    out.push(s.p);
    for w in points.windows(2) {
        let span = w[1].t - w[0].t;
        let k = ((span / DEFAULT_DT) - 1e-9).ceil().max(1.0) as usize;
        for _ in 0..k {
            s = flight.step(&s, aero, span / k as f64);
        }
        out.push(s.p);
    }
    out
}

/// Levenberg–Marquardt refinement of the initial state and coefficients
/// against the measured positions of one flight segment.
pub fn refine_aero(points: &[TrackPoint], start: &EstimatedState, spin: Vec3, initial: AeroCoefficients, flight: &FlightModel) -> AeroFit {
    let with_km = spin.norm() > 0.0;
    let n_par = if with_km { 8 } else { 7 };
    let measured: Vec<usize> = (0..points.len()).filter(|&i| !points[i].filled).collect();
    let unpack = |th: &[f64]| {
        let ball = BallState::new(Vec3::new(th[0], th[1], th[2]), Vec3::new(th[3], th[4], th[5]), spin);
        let aero = AeroCoefficients::new(th[6].max(0.0), if with_km { th[7].max(0.0) } else { 0.0 });
        (ball, aero)
    };
    let residuals = |th: &[f64]| {
        let (ball, aero) = unpack(th);
        let sim = simulate_positions(&ball, &aero, flight, points);
        let mut r = DVector::zeros(3 * measured.len());
        for (k, &i) in measured.iter().enumerate() {
            let d = sim[i] - points[i].p;
            r.fixed_rows_mut::<3>(3 * k).copy_from(&d);
        }
        r
    };
    let mut theta = vec![start.p.x, start.p.y, start.p.z, start.v.x, start.v.y, start.v.z, initial.k_d];
    if with_km {
        theta.push(initial.k_m);
    }
    let mut r = residuals(&theta);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    for _ in 0..60 {
        let mut jac = DMatrix::zeros(r.len(), n_par);
        for j in 0..n_par {
            let h = 1e-7 * theta[j].abs().max(1e-2);
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[j] += h;
            dn[j] -= h;
            jac.set_column(j, &((residuals(&up) - residuals(&dn)) / (2.0 * h)));
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..12 {
            let mut lhs = jtj.clone();
            for d in 0..n_par {
                lhs[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(chol) = lhs.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&jtr));
            let mut trial: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect();
            for k in trial.iter_mut().skip(6) {
                *k = k.max(0.0);
            }
            let r_trial = residuals(&trial);
            let c_trial = r_trial.norm_squared();
            if c_trial < cost {
                let step: f64 = delta.iter().zip(&theta).map(|(d, t)| (d / t.abs().max(1e-2)).abs()).fold(0.0, f64::max);
                theta = trial;
                r = r_trial;
                cost = c_trial;
                lambda = (lambda / 3.0).max(1e-12);
                improved = step > 1e-12;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    let (_, aero) = unpack(&theta);
    AeroFit { aero, accel_rms: f64::NAN, position_rms: Some((cost / measured.len().max(1) as f64).sqrt()) }
}

/// Options for turning a recording into a replayable ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Real2SimConfig {
    /// Smoothing window, samples (odd, at least 3).
    pub window: usize,
    pub filter: SmoothingFilter,
    /// Ball spin during the first flight segment, rad/s. Recordings carry no
    /// spin; with the default of zero `k_m` is pinned to 0.
    pub spin: Vec3,
    /// Fit `k_d` and `k_m` from the recording; otherwise use `aero`.
    pub fit_aero: bool,
    /// Refine the linear fit against measured positions.
    pub refine: bool,
    pub aero: AeroCoefficients,
}

impl Default for Real2SimConfig {
    fn default() -> Self {
        Self {
            window: 7,
            filter: SmoothingFilter::MovingAverage,
            spin: Vec3::zeros(),
            fit_aero: true,
            refine: true,
            aero: AeroCoefficients::new(0.1, 0.0),
        }
    }
}

/// A recording ready for replay.
#[derive(Debug, Clone)]
pub struct ProcessedRecording {
    pub points: Vec<TrackPoint>,
    pub states: Vec<EstimatedState>,
    /// Flight segments between bounces, as index ranges into `states`.
    pub segments: Vec<Range<usize>>,
    /// Spin assumed in each segment.
    pub spins: Vec<Vec3>,
    pub fit: AeroFit,
}

/// Spin after the first table bounce reached from `s`, if any.
fn spin_after_bounce(s: &BallState, aero: &AeroCoefficients, arena: &ArenaConfig) -> Option<Vec3> {
    let dt = DEFAULT_DT / 4.0;
    let mut cur = *s;
    for i in 0..400 {
        let next = arena.flight.step(&cur, aero, dt);
        if let Some(hit) = detect_surface(&cur, &next, i as f64 * dt, dt, &arena.geometry, arena.ball.radius) {
            if hit.surface != Surface::Table {
                return None;
            }
            let frame = SurfaceFrame::table(arena.geometry.height);
            return resolve_bounce(&hit.state, &frame, &arena.table_contact, &arena.ball).ok().map(|(out, _)| out.w);
        }
        cur = next;
    }
    None
}

pub fn process_recording(samples: &[RecordedSample], cfg: &Real2SimConfig, arena: &ArenaConfig) -> Result<ProcessedRecording> {
    let all = fill_gaps(samples)?;
    let mut segments = split_at_bounces(&all, arena);
    // Short pieces at either end are cut off; a short piece between two
    // bounces cannot be estimated.
    while segments.first().is_some_and(|s| s.len() < 3) {
        segments.remove(0);
    }
    while segments.last().is_some_and(|s| s.len() < 3) {
        segments.pop();
    }
    if segments.is_empty() {
        return Err(Real2SimError::TooFewSamples { needed: 3, got: all.len() });
    }
    if let Some(s) = segments.iter().find(|s| s.len() < 3) {
        return Err(Real2SimError::TooFewSamples { needed: 3, got: s.len() });
    }
    let offset = segments[0].start;
    let points = all[offset..segments[segments.len() - 1].end].to_vec();
    let segments: Vec<Range<usize>> = segments.into_iter().map(|s| s.start - offset..s.end - offset).collect();
    let mut states = Vec::with_capacity(points.len());
    for s in &segments {
        states.extend(estimate_states(&points[s.clone()], cfg.window, cfg.filter)?);
    }

    let first = segments[0].clone();
    let fit = if cfg.fit_aero {
        let linear = fit_aero(&states[first.clone()], cfg.spin, arena.flight.gravity)?;
        if cfg.refine {
            let refined = refine_aero(&points[first.clone()], &states[first.start], cfg.spin, linear.aero, &arena.flight);
            AeroFit { accel_rms: linear.accel_rms, ..refined }
        } else {
            linear
        }
    } else {
        AeroFit { aero: cfg.aero, accel_rms: f64::NAN, position_rms: None }
    };

    let mut spins = vec![cfg.spin];
    for s in &segments[..segments.len() - 1] {
        let last = &states[s.end - 1];
        let w = *spins.last().expect("non-empty");
        spins.push(spin_after_bounce(&BallState::new(last.p, last.v, w), &fit.aero, arena).unwrap_or(w));
    }
    Ok(ProcessedRecording { points, states, segments, spins, fit })
}

impl ProcessedRecording {
    /// Ball path for the arena, with time measured from the first sample.
    pub fn script(&self) -> ScriptedBall {
        let t0 = self.states[0].t;
        let mut samples = Vec::with_capacity(self.states.len());
        for (seg, w) in self.segments.iter().zip(&self.spins) {
            for s in &self.states[seg.clone()] {
                samples.push((s.t - t0, BallState::new(s.p, s.v, *w)));
            }
        }
        ScriptedBall { samples, aero: self.fit.aero }
    }
}

/// Events of a scripted path from launch up to its first surface contact.
pub fn inbound_events(script: &ScriptedBall, arena: &ArenaConfig) -> Vec<RallyEvent> {
    let Some(&(_, first)) = script.samples.first() else { return Vec::new() };
    let mut events = vec![RallyEvent::new(EventKind::Launch, 0.0, first)];
    for w in script.samples.windows(2) {
        let ((t0, b0), (t1, b1)) = (w[0], w[1]);
        if let Some(ev) = scripted_event(&b0, &b1, t0, t1 - t0, &arena.geometry, arena.ball.radius) {
            events.push(ev);
            if ev.kind != EventKind::NetCrossed {
                break;
            }
        }
    }
    events
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub events: Vec<RallyEvent>,
    pub summary: EpisodeSummary,
    pub fit: AeroFit,
}

/// Plays one episode in which the ball follows the recording until the
/// racket touches it. The policy acts on its mean action throughout.
pub fn replay(rec: &ProcessedRecording, arena: &Arc<ArenaConfig>, policy: &Policy, env_seed: u64, index: u64) -> Result<ReplayReport> {
    let script = rec.script();
    let inbound = inbound_events(&script, arena);
    if !is_valid_rally(&inbound) {
        let kinds: Vec<&str> = inbound.iter().map(|e| e.kind.as_str()).collect();
        return Err(Real2SimError::InvalidInbound(kinds.join(",")));
    }
    let mut env = RallyEnv::new(Arc::clone(arena), env_seed, index);
    env.set_stage(StageIndex::TARGET);
    let mut obs = env.reset_scripted(script);
    loop {
        let out = env.step(&policy.act_mean(&obs)).expect("policy actions are finite");
        if let Some(summary) = out.info.episode {
            return Ok(ReplayReport { events: env.events().to_vec(), summary, fit: rec.fit });
        }
        obs = out.observation;
    }
}

/// Flies a seed through table bounces exactly as the arena does without a
/// robot, sampling every physics step. Stops at the floor, when the ball
/// leaves the arena bounds, or after `duration` seconds.
pub fn export_flight(seed: &RallySeed, arena: &ArenaConfig, duration: f64) -> Vec<(f64, BallState)> {
    let dt = arena.physics_dt();
    let mut ball = seed.ball();
    let mut out = vec![(0.0, ball)];
    let steps = (duration / dt).round() as usize;
    for k in 0..steps {
        let t0 = k as f64 * dt;
        let next = arena.flight.step(&ball, &seed.aero, dt);
        ball = match detect_surface(&ball, &next, t0, dt, &arena.geometry, arena.ball.radius) {
            Some(hit) if hit.surface == Surface::Table => {
                let frame = SurfaceFrame::table(arena.geometry.height);
                match resolve_bounce(&hit.state, &frame, &arena.table_contact, &arena.ball) {
                    Ok((bounced, _)) => arena.flight.step(&bounced, &seed.aero, (1.0 - (hit.time - t0) / dt) * dt),
                    Err(_) => next,
                }
            }
            Some(hit) if hit.surface == Surface::Floor => break,
            _ => next,
        };
        if !arena.geometry.in_bounds(&ball.p) {
            break;
        }
        out.push((t0 + dt, ball));
    }
    out
}

/// Converts simulator states to recording rows.
pub fn to_recording(path: &[(f64, BallState)]) -> Vec<RecordedSample> {
    path.iter().map(|(t, b)| RecordedSample::new(t * 1e3, [b.p.x * 1e3, b.p.y * 1e3, b.p.z * 1e3])).collect()
}

/// Recording rows from an episode trace, one per control step.
pub fn trace_to_recording(rows: &[TraceRow]) -> Vec<RecordedSample> {
    to_recording(&rows.iter().map(|r| (r.t, r.ball)).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn track(n: usize, hz: f64, f: impl Fn(f64) -> Vec3) -> Vec<TrackPoint> {
        (0..n).map(|i| i as f64 / hz).map(|t| TrackPoint { t, p: f(t), filled: false }).collect()
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![RecordedSample::new(0.0, [1.5, -2.0, 900.0]), RecordedSample::dropped(5.0), RecordedSample::new(10.0, [2.0, -2.5, 899.0])];
        let mut buf = Vec::new();
        write_recorded(&mut buf, &rows).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("t_ms,x_mm,y_mm,z_mm,present\n0,1.5,-2,900,1\n"));
        assert_eq!(read_recorded(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn csv_errors() {
        assert!(read_recorded("".as_bytes()).unwrap().is_empty());
        let dup = "t_ms,x_mm,y_mm,z_mm,present\n0,1,2,3,1\n0,1,2,3,1\n";
        assert!(matches!(read_recorded(dup.as_bytes()), Err(Real2SimError::NonMonotonicTime { line: 3, .. })));
        let bad = "t_ms,x_mm,y_mm,z_mm,present\n0,1,2,3,1\n5,x,2,3,1\n";
        assert!(matches!(read_recorded(bad.as_bytes()), Err(Real2SimError::Parse { line: 3, .. })));
        assert!(matches!(read_recorded("t,x,y,z\n".as_bytes()), Err(Real2SimError::Parse { line: 1, .. })));
    }

    #[test]
    fn linear_motion_is_differentiated_exactly() {
        let pts = track(50, 100.0, |t| Vec3::new(t, 0.5, 1.0));
        for s in estimate_states(&pts, 7, SmoothingFilter::MovingAverage).unwrap() {
            assert_abs_diff_eq!(s.v, Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-9);
            assert_abs_diff_eq!(s.a, Vec3::zeros(), epsilon = 1e-6);
        }
    }

    #[test]
    fn constant_position_has_zero_rates() {
        let pts = track(10, 100.0, |_| Vec3::new(0.2, 0.1, 1.0));
        for s in estimate_states(&pts, 3, SmoothingFilter::MovingAverage).unwrap() {
            assert_abs_diff_eq!(s.v, Vec3::zeros(), epsilon = 1e-10);
            assert_abs_diff_eq!(s.a, Vec3::zeros(), epsilon = 1e-7);
        }
    }

    #[test]
    fn window_and_length_checks() {
        let pts = track(10, 100.0, |t| Vec3::new(t, 0.0, 0.0));
        assert!(matches!(estimate_states(&pts, 4, SmoothingFilter::MovingAverage), Err(Real2SimError::BadWindow(4))));
        assert!(matches!(estimate_states(&pts[..2], 3, SmoothingFilter::MovingAverage), Err(Real2SimError::TooFewSamples { .. })));
    }

    #[test]
    fn gaps_are_filled_and_flagged() {
        let mut rows: Vec<RecordedSample> = (0..10).map(|i| RecordedSample::new(i as f64 * 5.0, [i as f64 * 10.0, 0.0, 500.0])).collect();
        rows[6] = RecordedSample::dropped(30.0);
        rows[7] = RecordedSample::dropped(35.0);
        let pts = fill_gaps(&rows).unwrap();
        assert!(pts[6].filled && pts[7].filled && !pts[8].filled);
        assert_abs_diff_eq!(pts[7].p, Vec3::new(0.07, 0.0, 0.5), epsilon = 1e-12);
        assert_eq!(pts[3].p, Vec3::new(0.03, 0.0, 0.5));
        rows[1] = RecordedSample::dropped(5.0);
        assert!(matches!(fill_gaps(&rows), Err(Real2SimError::LeadingGap)));
    }

    #[test]
    fn hover_is_ill_conditioned() {
        let pts = track(20, 100.0, |_| Vec3::new(0.0, 0.0, 1.0));
        let states = estimate_states(&pts, 7, SmoothingFilter::MovingAverage).unwrap();
        assert!(matches!(fit_aero(&states, Vec3::zeros(), Vec3::new(0.0, 0.0, -9.81)), Err(Real2SimError::IllConditioned)));
    }
}
