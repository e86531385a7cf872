//! The rally environment: a robot arm with a racket, a ball, the table, and
//! the step/reset loop the learner drives.
//!
//! One control step holds the PD targets fixed for `substeps` physics steps.
//! Within each physics step the racket is swept against the ball, surface
//! crossings are detected by interpolation, and bounces are resolved with
//! the impulse model. Rally events feed the state machine, and the reward is
//! read off the stage column of the reward matrix.

pub mod chain;
pub mod observation;
pub mod sensor;

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{resolve_bounce, resolve_racket_hit, ContactParams, RacketFace, SurfaceFrame};
use crate::dynamics::{detect_surface, AeroCoefficients, BallProperties, BallState, FlightModel, Surface};
use crate::exec::Exec;
use crate::rally::{
    advance_state, auto_advance, classify_hit, classify_net_plane, EventKind, RallyEvent, TableGeometry, TerminalReason,
    TrajectoryState, Transition,
};
use crate::reward::{performance_reward, stage_reward, RewardConstants, RewardFeatures, StageIndex};
use crate::seedgen::{sample_candidate, stream_rng, RallySeed, SeedBuffer, SeedRanges};
use crate::Vec3;

pub use chain::{ChainConfig, ChainPose, JointKind, JointSpec, RacketPose, RobotState, N_JOINTS};
pub use observation::{Observation, ObservationParts, OBS_DIM};
pub use sensor::{BallSample, BallSensor, NoiseLatencyConfig};

pub type Action = [f64; N_JOINTS];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArenaConfig {
    pub geometry: TableGeometry,
    pub ball: BallProperties,
    pub flight: FlightModel,
    pub table_contact: ContactParams,
    pub racket_contact: ContactParams,
    pub chain: ChainConfig,
    pub noise: NoiseLatencyConfig,
    /// Control period, s.
    pub control_dt: f64,
    /// Physics steps per control period.
    pub substeps: usize,
    /// Episode time limit, s.
    pub episode_time: f64,
    /// Target rectangle inset from the opponent-court edges, m.
    pub target_inset: f64,
    pub reward: RewardConstants,
    /// Ranges for the random initial ball used when the seed buffer is empty.
    pub fallback_ranges: SeedRanges,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        Self {
            geometry: TableGeometry::default(),
            ball: BallProperties::default(),
            flight: FlightModel::default(),
            table_contact: ContactParams::TABLE,
            racket_contact: ContactParams::RACKET,
            chain: ChainConfig::default(),
            noise: NoiseLatencyConfig::default(),
            control_dt: 1.0 / 120.0,
            substeps: 3,
            episode_time: 3.0,
            target_inset: 0.1,
            reward: RewardConstants::default(),
            fallback_ranges: SeedRanges::default(),
        }
    }
}

impl ArenaConfig {
    pub fn physics_dt(&self) -> f64 {
        self.control_dt / self.substeps as f64
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.geometry.is_valid() {
            return Err("invalid table geometry".into());
        }
        if !self.table_contact.is_valid() || !self.racket_contact.is_valid() {
            return Err("invalid contact parameters".into());
        }
        if !(self.ball.mass > 0.0 && self.ball.radius > 0.0 && self.ball.inertia > 0.0) {
            return Err("ball mass, radius and inertia must be positive".into());
        }
        if !(self.control_dt > 0.0) || self.substeps == 0 || !(self.episode_time > 0.0) {
            return Err("control_dt, substeps and episode_time must be positive".into());
        }
        let g = &self.geometry;
        if !(self.target_inset >= 0.0 && 2.0 * self.target_inset < g.length / 2.0 && 2.0 * self.target_inset < g.width) {
            return Err("target_inset leaves no room on the opponent court".into());
        }
        self.chain.validate()?;
        self.noise.validate()?;
        self.fallback_ranges.validate()
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum ArenaError {
    #[error("action component {index} is not finite")]
    NonFiniteAction { index: usize },
    #[error("step called on a finished episode")]
    EpisodeFinished,
}

/// Per-episode outcome, emitted on the step that ends the episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    /// Reached racket contact (T2).
    pub caught: bool,
    /// Reached the opponent-court bounce (T3).
    pub returned: bool,
    /// Landing-point error for returned balls, m.
    pub landing_error: Option<f64>,
    /// `None` when the episode ended in success.
    pub terminal: Option<TerminalReason>,
    pub steps: usize,
    pub total_reward: f64,
    pub random_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub events: Vec<RallyEvent>,
    pub state: TrajectoryState,
    pub terminal: Option<TerminalReason>,
    pub success: bool,
    pub dropout: bool,
    pub random_fallback: bool,
    /// Undesired contacts counted by the performance penalty this step.
    pub contacts: u32,
    pub episode: Option<EpisodeSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// A ball path driven by recorded states rather than physics. Used for
/// replaying captured trajectories up to the robot's hit.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedBall {
    /// `(t, state)` with strictly increasing `t`, starting at 0.
    pub samples: Vec<(f64, BallState)>,
    /// Coefficients used once the ball is handed over to physics.
    pub aero: AeroCoefficients,
}

impl ScriptedBall {
    pub fn end_time(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.0)
    }

    /// Linearly interpolated state, or `None` past the end of the script.
    pub fn state_at(&self, t: f64) -> Option<BallState> {
        let i = self.samples.partition_point(|(ts, _)| *ts <= t);
        if i == 0 {
            return self.samples.first().map(|s| s.1);
        }
        if i == self.samples.len() {
            let (t_last, s_last) = self.samples[i - 1];
            return (t <= t_last).then_some(s_last);
        }
        let (t0, s0) = self.samples[i - 1];
        let (t1, s1) = self.samples[i];
        Some(s0.lerp(&s1, (t - t0) / (t1 - t0)))
    }
}

/// One row of an exported episode trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub ball: BallState,
    pub q: [f64; N_JOINTS],
    pub qd: [f64; N_JOINTS],
    pub state: TrajectoryState,
    pub events: Vec<EventKind>,
}

pub fn write_trace_csv<W: Write>(out: W, rows: &[TraceRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["t", "px", "py", "pz", "vx", "vy", "vz", "wx", "wy", "wz"].map(String::from).to_vec();
    header.extend((0..N_JOINTS).map(|i| format!("q{i}")));
    header.extend((0..N_JOINTS).map(|i| format!("qd{i}")));
    header.push("state".into());
    header.push("event".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = vec![r.t.to_string()];
        for v in [&r.ball.p, &r.ball.v, &r.ball.w] {
            rec.extend(v.iter().map(|x| x.to_string()));
        }
        rec.extend(r.q.iter().map(|x| x.to_string()));
        rec.extend(r.qd.iter().map(|x| x.to_string()));
        rec.push(r.state.name().to_string());
        rec.push(r.events.iter().map(|e| e.as_str()).collect::<Vec<_>>().join("|"));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Where the racket met the ball inside one physics step.
#[derive(Debug, Clone, Copy)]
struct RacketCrossing {
    alpha: f64,
    face: RacketFace,
}

/// Swept test of the ball centre against the racket slab of half-thickness
/// `r_b` on either face, followed by a radial check against the disk.
fn racket_crossing(b0: &BallState, b1: &BallState, p0: &ChainPose, p1: &ChainPose, r_b: f64, radius: f64) -> Option<RacketCrossing> {
    let d0 = p0.racket_normal.dot(&(b0.p - p0.racket.position));
    let d1 = p1.racket_normal.dot(&(b1.p - p1.racket.position));
    let (alpha, side) = if d0 > r_b && d1 <= r_b {
        ((d0 - r_b) / (d0 - d1), 1.0)
    } else if d0 < -r_b && d1 >= -r_b {
        ((-r_b - d0) / (d1 - d0), -1.0)
    } else {
        return None;
    };
    let lerp = |a: &Vec3, b: &Vec3| a + (b - a) * alpha;
    let center = lerp(&p0.racket.position, &p1.racket.position);
    let normal = lerp(&p0.racket_normal, &p1.racket_normal).normalize() * side;
    let velocity = lerp(&p0.racket.linear_velocity, &p1.racket.linear_velocity);
    let ball = b0.lerp(b1, alpha);
    let offset = ball.p - center;
    if (offset - normal * offset.dot(&normal)).norm() > radius {
        return None;
    }
    Some(RacketCrossing { alpha, face: RacketFace { frame: SurfaceFrame::new(center, normal, velocity), radius } })
}

/// Number of robot points (joints and racket centre) below the table
/// surface while above its footprint.
fn robot_table_contacts(pose: &ChainPose, g: &TableGeometry) -> u32 {
    let below = |p: &Vec3| g.over_table(p.x, p.y) && p.z < g.height;
    u32::from(pose.joint_points.iter().any(below) || below(&pose.racket.position))
}

/// A single rally environment. All randomness comes from its own stream.
#[derive(Debug, Clone)]
pub struct RallyEnv {
    cfg: Arc<ArenaConfig>,
    rng: ChaCha8Rng,
    stage: StageIndex,
    robot: RobotState,
    pose: ChainPose,
    ball: BallState,
    aero: AeroCoefficients,
    script: Option<ScriptedBall>,
    state: TrajectoryState,
    target: [f64; 2],
    t: f64,
    steps: usize,
    sensor: BallSensor,
    prev_action: Action,
    observation: Observation,
    events: Vec<RallyEvent>,
    caught: bool,
    returned: bool,
    landing_error: Option<f64>,
    hit_racket_vx: f64,
    random_fallback: bool,
    total_reward: f64,
    done: bool,
    trace: Option<Vec<TraceRow>>,
}

impl RallyEnv {
    /// Creates an environment whose randomness is the `index`-th stream of
    /// `seed`. The episode starts after the first [`RallyEnv::reset`].
    pub fn new(cfg: Arc<ArenaConfig>, seed: u64, index: u64) -> Self {
        let robot = RobotState::at_home(&cfg.chain);
        let pose = chain::forward_kinematics(&cfg.chain, &robot.q, &robot.qd);
        let ball = BallState::at_rest(Vec3::new(0.5, 0.0, 1.0));
        let mut env = Self {
            rng: stream_rng(seed, index),
            stage: StageIndex::CATCH,
            robot,
            pose,
            ball,
            aero: AeroCoefficients::NONE,
            script: None,
            state: TrajectoryState::T0,
            target: [0.0; 2],
            t: 0.0,
            steps: 0,
            sensor: BallSensor::new(0),
            prev_action: [0.0; N_JOINTS],
            observation: Observation([0.0; OBS_DIM]),
            events: Vec::new(),
            caught: false,
            returned: false,
            landing_error: None,
            hit_racket_vx: 0.0,
            random_fallback: false,
            total_reward: 0.0,
            done: true,
            trace: None,
            cfg,
        };
        env.prev_action = env.home_action();
        env
    }

    pub fn config(&self) -> &ArenaConfig {
        &self.cfg
    }

    pub fn set_stage(&mut self, stage: StageIndex) {
        self.stage = stage;
    }

    pub fn stage(&self) -> StageIndex {
        self.stage
    }

    /// Enables or disables trace recording; enabling clears the trace.
    pub fn set_trace(&mut self, on: bool) {
        self.trace = on.then(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<TraceRow> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn state(&self) -> TrajectoryState {
        self.state
    }

    pub fn ball(&self) -> &BallState {
        &self.ball
    }

    pub fn robot(&self) -> &RobotState {
        &self.robot
    }

    pub fn racket(&self) -> &RacketPose {
        &self.pose.racket
    }

    pub fn pose(&self) -> &ChainPose {
        &self.pose
    }

    pub fn target(&self) -> [f64; 2] {
        self.target
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn events(&self) -> &[RallyEvent] {
        &self.events
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observation(&self) -> &Observation {
        &self.observation
    }

    pub fn sensor_delay(&self) -> usize {
        self.sensor.delay()
    }

    /// Action that holds the home pose.
    pub fn home_action(&self) -> Action {
        self.action_for(&self.cfg.chain.home())
    }

    /// Action whose joint targets equal `q`.
    pub fn action_for(&self, q: &[f64; N_JOINTS]) -> Action {
        let mut a = [0.0; N_JOINTS];
        for ((ai, j), qi) in a.iter_mut().zip(&self.cfg.chain.joints).zip(q) {
            *ai = j.action_from_target(*qi);
        }
        a
    }

    /// Starts an episode from `seed`, or from a random launch when `None`.
    pub fn reset(&mut self, seed: Option<RallySeed>) -> Observation {
        let random_fallback = seed.is_none();
        self.begin_episode(random_fallback);
        let seed = match seed {
            Some(s) => s,
            None => sample_candidate(&mut self.rng, &self.cfg.fallback_ranges),
        };
        self.ball = seed.ball();
        self.aero = seed.aero;
        self.script = None;
        self.finish_reset()
    }

    /// Starts an episode whose ball follows `script` until the racket
    /// touches it or the script runs out.
    pub fn reset_scripted(&mut self, script: ScriptedBall) -> Observation {
        self.begin_episode(false);
        self.ball = script.samples.first().map(|s| s.1).expect("scripted ball needs at least one sample");
        self.aero = script.aero;
        self.script = Some(script);
        self.finish_reset()
    }

    fn begin_episode(&mut self, random_fallback: bool) {
        let cfg = Arc::clone(&self.cfg);
        let delay = self.rng.random_range(cfg.noise.delay_min..=cfg.noise.delay_max);
        let g = &cfg.geometry;
        let inset = cfg.target_inset;
        let tx = self.rng.random_range(inset..=g.length / 2.0 - inset);
        let ty = self.rng.random_range(-g.width / 2.0 + inset..=g.width / 2.0 - inset);
        self.target = [tx, ty];
        self.sensor = BallSensor::new(delay);
        self.robot = RobotState::at_home(&cfg.chain);
        self.pose = chain::forward_kinematics(&cfg.chain, &self.robot.q, &self.robot.qd);
        self.state = TrajectoryState::T0;
        self.t = 0.0;
        self.steps = 0;
        self.prev_action = self.home_action();
        self.events.clear();
        self.caught = false;
        self.returned = false;
        self.landing_error = None;
        self.hit_racket_vx = 0.0;
        self.random_fallback = random_fallback;
        self.total_reward = 0.0;
        self.done = false;
        if let Some(tr) = self.trace.as_mut() {
            tr.clear();
        }
    }

    fn finish_reset(&mut self) -> Observation {
        self.record_trace(Vec::new());
        self.sense_and_observe();
        self.observation
    }

    fn sense_and_observe(&mut self) -> bool {
        self.sensor.push_truth(BallSample { p: self.ball.p, v: self.ball.v });
        let (sample, dropout) = self.sensor.sense(&self.cfg.noise, &mut self.rng);
        let r = &self.pose.racket;
        let v3 = |v: &Vec3| [v.x, v.y, v.z];
        self.observation = ObservationParts {
            q: self.robot.q,
            qd: self.robot.qd,
            racket_pos: v3(&r.position),
            racket_quat: r.quaternion_wxyz(),
            racket_vel: v3(&r.linear_velocity),
            ball_pos: v3(&sample.p),
            ball_vel: v3(&sample.v),
            target: self.target,
            state: self.state,
        }
        .build();
        dropout
    }

    fn record_trace(&mut self, events: Vec<EventKind>) {
        if let Some(tr) = self.trace.as_mut() {
            tr.push(TraceRow { t: self.t, ball: self.ball, q: self.robot.q, qd: self.robot.qd, state: self.state, events });
        }
    }

    /// Advances one control period.
    pub fn step(&mut self, action: &Action) -> Result<StepOutput, ArenaError> {
        if let Some(index) = action.iter().position(|a| !a.is_finite()) {
            return Err(ArenaError::NonFiniteAction { index });
        }
        if self.done {
            return Err(ArenaError::EpisodeFinished);
        }
        let cfg = Arc::clone(&self.cfg);
        let action = action.map(|a| a.clamp(-1.0, 1.0));
        let mut q_target = [0.0; N_JOINTS];
        for ((qt, j), a) in q_target.iter_mut().zip(&cfg.chain.joints).zip(&action) {
            *qt = j.target_from_action(*a);
        }

        let mut step_events = Vec::new();
        let mut terminal = None;
        if self.state == TrajectoryState::T0 {
            apply_event(&mut self.state, &mut terminal, &mut step_events, RallyEvent::new(EventKind::Launch, self.t, self.ball));
        } else if let Some(next) = auto_advance(self.state) {
            self.state = next;
        }

        let dt = cfg.physics_dt();
        let r_b = cfg.ball.radius;
        let mut torque_sum = [0.0; N_JOINTS];
        let mut contacts = 0u32;
        for k in 0..cfg.substeps {
            if terminal.is_some() {
                break;
            }
            let t0 = self.t + k as f64 * dt;
            let pose0 = self.pose.clone();
            let tau = chain::integrate_joints(&cfg.chain, &mut self.robot, &q_target, dt);
            for (s, t) in torque_sum.iter_mut().zip(&tau) {
                *s += t;
            }
            self.pose = chain::forward_kinematics(&cfg.chain, &self.robot.q, &self.robot.qd);
            contacts += robot_table_contacts(&self.pose, &cfg.geometry);

            let b0 = self.ball;
            let scripted = self.script.as_ref().and_then(|s| s.state_at(t0 + dt));
            let b1 = match scripted {
                Some(s) => s,
                None => {
                    self.script = None;
                    cfg.flight.step(&b0, &self.aero, dt)
                }
            };

            let racket = racket_crossing(&b0, &b1, &pose0, &self.pose, r_b, cfg.chain.racket_radius);
            let surface = if scripted.is_some() { None } else { detect_surface(&b0, &b1, t0, dt, &cfg.geometry, r_b) };
            let surface_alpha = surface.map(|h| (h.time - t0) / dt);

            match (racket, surface_alpha) {
                (Some(rc), sa) if sa.is_none_or(|a| rc.alpha <= a) => {
                    let at = b0.lerp(&b1, rc.alpha);
                    match resolve_racket_hit(&at, &rc.face, &cfg.racket_contact, &cfg.ball) {
                        Ok((out, _)) => {
                            self.script = None;
                            self.hit_racket_vx = rc.face.frame.surface_velocity.x;
                            self.ball = cfg.flight.step(&out, &self.aero, (1.0 - rc.alpha) * dt);
                            apply_event(&mut self.state, &mut terminal, &mut step_events, RallyEvent::new(EventKind::RacketContact, t0 + rc.alpha * dt, out));
                        }
                        Err(_) => self.ball = b1,
                    }
                }
                (_, Some(alpha)) => {
                    let hit = surface.expect("alpha implies a hit");
                    let kind = classify_hit(hit.surface, &hit.state, &cfg.geometry, r_b);
                    self.ball = match hit.surface {
                        Surface::Table => match resolve_bounce(&hit.state, &SurfaceFrame::table(cfg.geometry.height), &cfg.table_contact, &cfg.ball) {
                            Ok((out, _)) => cfg.flight.step(&out, &self.aero, (1.0 - alpha) * dt),
                            Err(_) => b1,
                        },
                        _ => b1,
                    };
                    apply_event(&mut self.state, &mut terminal, &mut step_events, RallyEvent::new(kind, hit.time, hit.state));
                }
                _ => {
                    self.ball = b1;
                    if scripted.is_some() {
                        if let Some(ev) = scripted_event(&b0, &b1, t0, dt, &cfg.geometry, r_b) {
                            apply_event(&mut self.state, &mut terminal, &mut step_events, ev);
                        }
                    } else if !cfg.geometry.in_bounds(&b1.p) {
                        apply_event(&mut self.state, &mut terminal, &mut step_events, RallyEvent::new(EventKind::OutOfBounds, t0 + dt, b1));
                    }
                }
            }

            let body_reach = r_b + cfg.chain.link_radius;
            if self.pose.link_segments().any(|(a, b)| chain::point_segment_distance(&self.ball.p, &a, &b) <= body_reach) {
                contacts += 1;
                apply_event(&mut self.state, &mut terminal, &mut step_events, RallyEvent::new(EventKind::BodyContact, t0 + dt, self.ball));
            }
        }
        self.t += cfg.control_dt;
        self.steps += 1;

        for ev in &step_events {
            match ev.kind {
                EventKind::RacketContact if self.state == TrajectoryState::T2 => self.caught = true,
                EventKind::BounceOpponentCourt if self.state == TrajectoryState::T3 => {
                    self.returned = true;
                    let dx = ev.ball.p.x - self.target[0];
                    let dy = ev.ball.p.y - self.target[1];
                    self.landing_error = Some(dx.hypot(dy));
                }
                _ => {}
            }
        }
        if terminal.is_none() && self.state != TrajectoryState::T3 && self.t >= cfg.episode_time - 1e-12 {
            terminal = Some(TerminalReason::Timeout);
        }
        if !self.ball.is_finite() && terminal.is_none() {
            terminal = Some(TerminalReason::Timeout);
        }

        let ball_pos = self.ball.p;
        let target_point = Vec3::new(self.target[0], self.target[1], cfg.geometry.height);
        let features = RewardFeatures {
            d_rb: (self.pose.racket.position - ball_pos).norm(),
            d_bt: (ball_pos - target_point).norm(),
            v_rhb_x: self.hit_racket_vx,
            e_lt: self.landing_error.unwrap_or(0.0),
        };
        let torque_mean = torque_sum.map(|t| t / cfg.substeps as f64);
        let reward = stage_reward(self.state, &features, self.stage, &cfg.reward)
            + performance_reward(&torque_mean, &action, &self.prev_action, contacts, &cfg.reward);
        self.prev_action = action;
        self.total_reward += reward;

        let success = terminal.is_none() && self.state == TrajectoryState::T3;
        self.done = terminal.is_some() || success;
        self.events.extend(step_events.iter().copied());
        self.record_trace(step_events.iter().map(|e| e.kind).collect());
        let dropout = self.sense_and_observe();

        let episode = self.done.then(|| EpisodeSummary {
            caught: self.caught,
            returned: self.returned,
            landing_error: self.landing_error,
            terminal,
            steps: self.steps,
            total_reward: self.total_reward,
            random_fallback: self.random_fallback,
        });
        Ok(StepOutput {
            observation: self.observation,
            reward,
            done: self.done,
            info: StepInfo {
                events: step_events,
                state: self.state,
                terminal,
                success,
                dropout,
                random_fallback: self.random_fallback,
                contacts,
                episode,
            },
        })
    }
}

fn apply_event(state: &mut TrajectoryState, terminal: &mut Option<TerminalReason>, events: &mut Vec<RallyEvent>, ev: RallyEvent) {
    events.push(ev);
    if terminal.is_none() {
        match advance_state(*state, &ev) {
            Transition::Next(s) => *state = s,
            Transition::Terminal(r) => *terminal = Some(r),
        }
    }
}

/// Event detection for a recorded ball path: net-plane crossings by sign
/// change, table bounces by the vertical velocity turning upward close to
/// the surface. Recorded samples straddle the true impact, so the
/// interpolated path never actually penetrates the table.
pub fn scripted_event(b0: &BallState, b1: &BallState, t0: f64, dt: f64, g: &TableGeometry, r_b: f64) -> Option<RallyEvent> {
    const BOUNCE_BAND: f64 = 0.02;
    let (x0, x1) = (b0.p.x, b1.p.x);
    if (x0 > 0.0 && x1 <= 0.0) || (x0 < 0.0 && x1 >= 0.0) {
        let alpha = x0 / (x0 - x1);
        let at = b0.lerp(b1, alpha);
        return Some(RallyEvent::new(classify_net_plane(&at, g, r_b), t0 + alpha * dt, at));
    }
    let near_table = |b: &BallState| g.over_table(b.p.x, b.p.y) && (b.p.z - r_b - g.height).abs() <= BOUNCE_BAND;
    if b0.v.z < 0.0 && b1.v.z >= 0.0 && (near_table(b0) || near_table(b1)) {
        let at = if b0.p.z <= b1.p.z { *b0 } else { *b1 };
        return Some(RallyEvent::new(classify_hit(Surface::Table, &at, g, r_b), t0, at));
    }
    None
}

/// A batch of environments stepped together. Environment stepping runs in
/// parallel; resets pop the seed buffer sequentially in index order so the
/// result does not depend on scheduling.
#[derive(Debug, Clone)]
pub struct VecEnv {
    envs: Vec<RallyEnv>,
    observations: Vec<Observation>,
}

/// One environment's contribution to a batched step.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStep {
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

impl VecEnv {
    pub fn new(cfg: Arc<ArenaConfig>, n: usize, seed: u64) -> Self {
        let envs: Vec<RallyEnv> = (0..n).map(|i| RallyEnv::new(Arc::clone(&cfg), seed, i as u64)).collect();
        let observations = envs.iter().map(|e| *e.observation()).collect();
        Self { envs, observations }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[RallyEnv] {
        &self.envs
    }

    pub fn envs_mut(&mut self) -> &mut [RallyEnv] {
        &mut self.envs
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn set_stage(&mut self, stage: StageIndex) {
        for e in &mut self.envs {
            e.set_stage(stage);
        }
    }

    pub fn reset_all(&mut self, buffer: &SeedBuffer) {
        for (e, o) in self.envs.iter_mut().zip(&mut self.observations) {
            *o = e.reset(buffer.pop());
        }
    }

    /// Steps every environment and resets the finished ones. The returned
    /// observations (via [`VecEnv::observations`]) are those of the next
    /// episode for environments that were reset.
    pub fn step(&mut self, exec: Exec, actions: &[Action], buffer: &SeedBuffer) -> Result<Vec<BatchStep>, ArenaError> {
        assert_eq!(actions.len(), self.envs.len(), "one action per environment");
        let outs = exec.map_mut(&mut self.envs, |i, e| e.step(&actions[i]));
        let mut steps = Vec::with_capacity(outs.len());
        for (i, out) in outs.into_iter().enumerate() {
            let out = out?;
            self.observations[i] = if out.done { self.envs[i].reset(buffer.pop()) } else { out.observation };
            steps.push(BatchStep { reward: out.reward, done: out.done, info: out.info });
        }
        Ok(steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quiet() -> Arc<ArenaConfig> {
        Arc::new(ArenaConfig { noise: NoiseLatencyConfig::NONE, ..Default::default() })
    }

    fn lob() -> RallySeed {
        RallySeed {
            p0: Vec3::new(1.0, 0.3, 1.1),
            v0: Vec3::new(-4.5, 0.0, 1.0),
            w0: Vec3::zeros(),
            aero: AeroCoefficients::new(0.1, 0.0),
        }
    }

    #[test]
    fn default_config_validates() {
        assert_eq!(ArenaConfig::default().validate(), Ok(()));
    }

    #[test]
    fn reset_uses_seed_exactly() {
        let mut env = RallyEnv::new(quiet(), 1, 0);
        let obs = env.reset(Some(lob()));
        assert_eq!(*env.ball(), lob().ball());
        let parts = obs.parse().unwrap();
        assert_eq!(parts.state, TrajectoryState::T0);
        assert_eq!(parts.ball_pos, [1.0, 0.3, 1.1]);
        assert_eq!(&obs.0[observation::layout::ONE_HOT..], &[0.0; 4]);
    }

    #[test]
    fn empty_buffer_falls_back() {
        let mut env = RallyEnv::new(quiet(), 1, 0);
        env.reset(None);
        let out = env.step(&env.home_action()).unwrap();
        assert!(out.info.random_fallback);
    }

    #[test]
    fn identical_streams_identical_resets() {
        let mut a = RallyEnv::new(quiet(), 4, 2);
        let mut b = RallyEnv::new(quiet(), 4, 2);
        assert_eq!(a.reset(Some(lob())), b.reset(Some(lob())));
        assert_eq!(a.target(), b.target());
    }

    #[test]
    fn target_on_opponent_court() {
        let cfg = quiet();
        let mut env = RallyEnv::new(Arc::clone(&cfg), 8, 0);
        for _ in 0..200 {
            env.reset(Some(lob()));
            let [x, y] = env.target();
            assert!(x >= 0.1 && x <= cfg.geometry.length / 2.0 - 0.1);
            assert!(y.abs() <= cfg.geometry.width / 2.0 - 0.1);
        }
    }

    #[test]
    fn nan_action_rejected() {
        let mut env = RallyEnv::new(quiet(), 1, 0);
        env.reset(Some(lob()));
        let mut a = env.home_action();
        a[3] = f64::NAN;
        assert_eq!(env.step(&a), Err(ArenaError::NonFiniteAction { index: 3 }));
    }

    #[test]
    fn holding_home_costs_nothing_before_contact() {
        let mut env = RallyEnv::new(quiet(), 1, 0);
        env.reset(Some(lob()));
        let a = env.home_action();
        let out = env.step(&a).unwrap();
        // Launch step: T0 -> T01 and the distance-shaped row applies.
        assert_eq!(out.info.state, TrajectoryState::T01);
        let d = (env.racket().position - env.ball().p).norm();
        let expected = 1.0 / (1.0 + d * d).powi(2);
        assert_abs_diff_eq!(out.reward, expected, epsilon = 1e-12);
    }

    #[test]
    fn robot_bounce_pays_stage_one_bonus() {
        let mut env = RallyEnv::new(quiet(), 1, 0);
        env.reset(Some(lob()));
        let a = env.home_action();
        loop {
            let out = env.step(&a).unwrap();
            if out.info.events.iter().any(|e| e.kind == EventKind::BounceRobotCourt) {
                assert_eq!(out.info.state, TrajectoryState::T1);
                assert!(out.reward > 9.9 && out.reward <= 10.0, "reward {}", out.reward);
                break;
            }
            assert!(!out.done, "episode ended before the bounce: {:?}", out.info.terminal);
        }
        let out = env.step(&a).unwrap();
        assert_eq!(out.info.state, TrajectoryState::T12);
    }

    #[test]
    fn instantaneous_states_last_one_step() {
        let mut env = RallyEnv::new(quiet(), 1, 0);
        env.reset(Some(lob()));
        let a = env.home_action();
        let mut prev = env.state();
        while !env.is_done() {
            let out = env.step(&a).unwrap();
            if prev.is_instantaneous() && prev != TrajectoryState::T0 {
                assert_ne!(out.info.state, prev);
            }
            prev = out.info.state;
        }
    }

    #[test]
    fn racket_in_path_catches_ball() {
        // Park the racket where the lob passes after its bounce.
        let cfg = quiet();
        let mut env = RallyEnv::new(Arc::clone(&cfg), 1, 0);
        env.reset(Some(lob()));
        let mut rollout = env.clone();
        let hold = env.home_action();
        let x_plane = env.racket().position.x;
        let mut crossing = None;
        while !rollout.is_done() {
            let before = *rollout.ball();
            rollout.step(&hold).unwrap();
            let after = *rollout.ball();
            if before.p.x > x_plane && after.p.x <= x_plane {
                crossing = Some(before.lerp(&after, (before.p.x - x_plane) / (before.p.x - after.p.x)));
                break;
            }
        }
        let c = crossing.expect("lob reaches the racket plane");
        let mut q = cfg.chain.home();
        q[0] = c.p.y;
        q[1] = c.p.z;
        let a = env.action_for(&q);
        let mut caught = false;
        while !env.is_done() {
            let out = env.step(&a).unwrap();
            caught |= out.info.events.iter().any(|e| e.kind == EventKind::RacketContact);
        }
        assert!(caught, "events: {:?}", env.events().iter().map(|e| e.kind).collect::<Vec<_>>());
    }

    #[test]
    fn joints_stay_in_limits() {
        let mut env = RallyEnv::new(quiet(), 3, 0);
        env.reset(Some(lob()));
        let mut rng = stream_rng(11, 0);
        while !env.is_done() {
            let a: Action = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
            env.step(&a).unwrap();
            assert!(env.robot().within_limits(&env.config().chain));
        }
    }

    #[test]
    fn batch_layout_does_not_matter() {
        let cfg = Arc::new(ArenaConfig::default());
        let run = |exec: Exec| {
            let buffer = SeedBuffer::new(8);
            let mut v = VecEnv::new(Arc::clone(&cfg), 6, 42);
            v.reset_all(&buffer);
            let mut log = Vec::new();
            for k in 0..150 {
                let actions: Vec<Action> = (0..6).map(|i| [((k + i) as f64 * 0.1).sin(); N_JOINTS]).collect();
                let s = v.step(exec, &actions, &buffer).unwrap();
                log.push((s.iter().map(|b| b.reward.to_bits()).collect::<Vec<_>>(), v.observations().to_vec()));
            }
            log
        };
        assert_eq!(run(Exec::Sequential), run(Exec::Parallel));
    }

    #[test]
    fn scripted_ball_interpolates() {
        let s = ScriptedBall {
            samples: vec![
                (0.0, BallState::at_rest(Vec3::new(0.0, 0.0, 1.0))),
                (0.1, BallState::at_rest(Vec3::new(1.0, 0.0, 1.0))),
            ],
            aero: AeroCoefficients::NONE,
        };
        assert_abs_diff_eq!(s.state_at(0.05).unwrap().p.x, 0.5, epsilon = 1e-12);
        assert_eq!(s.state_at(0.1).unwrap().p.x, 1.0);
        assert!(s.state_at(0.11).is_none());
    }

    #[test]
    fn trace_export() {
        let mut env = RallyEnv::new(quiet(), 1, 0);
        env.set_trace(true);
        env.reset(Some(lob()));
        let a = env.home_action();
        while !env.is_done() {
            env.step(&a).unwrap();
        }
        let rows = env.take_trace();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), rows.len() + 1);
        assert!(text.contains("bounce_robot_court"));
    }
}
