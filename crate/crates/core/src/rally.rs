//! The rally cycle: eight trajectory states, event classification and rally
//! validity.
//!
//! Axis convention used across the crate: robot court on `-x`, opponent court
//! on `+x`, net plane at `x = 0`, `z` up with the floor at `z = 0`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::BallState;

/// Trajectory states in cycle order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrajectoryState {
    /// Initial state of the ball.
    T0,
    /// Opponent hitting period.
    T01,
    /// Bounce on the robot court.
    T1,
    /// Robot catching period.
    T12,
    /// Ball meets the robot's racket.
    T2,
    /// Robot hitting period.
    T23,
    /// Bounce on the opponent court.
    T3,
    /// Opponent catching period.
    T30,
}

impl TrajectoryState {
    pub const ALL: [TrajectoryState; 8] = [Self::T0, Self::T01, Self::T1, Self::T12, Self::T2, Self::T23, Self::T3, Self::T30];

    /// Continuous states, in the order used by the observation one-hot block.
    pub const CONTINUOUS: [TrajectoryState; 4] = [Self::T01, Self::T12, Self::T23, Self::T30];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_instantaneous(self) -> bool {
        self.index() % 2 == 0
    }

    /// Position in the continuous one-hot block, if continuous.
    pub fn continuous_slot(self) -> Option<usize> {
        (!self.is_instantaneous()).then(|| self.index() / 2)
    }

    pub fn successor(self) -> Self {
        Self::ALL[(self.index() + 1) % 8]
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::T0 => "T0",
            Self::T01 => "T01",
            Self::T1 => "T1",
            Self::T12 => "T12",
            Self::T2 => "T2",
            Self::T23 => "T23",
            Self::T3 => "T3",
            Self::T30 => "T30",
        }
    }
}

impl fmt::Display for TrajectoryState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Launch,
    NetCrossed,
    BounceRobotCourt,
    BounceOpponentCourt,
    RacketContact,
    BodyContact,
    NetContact,
    FloorContact,
    OutOfBounds,
}

impl EventKind {
    pub const ALL: [EventKind; 9] = [
        Self::Launch,
        Self::NetCrossed,
        Self::BounceRobotCourt,
        Self::BounceOpponentCourt,
        Self::RacketContact,
        Self::BodyContact,
        Self::NetContact,
        Self::FloorContact,
        Self::OutOfBounds,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Launch => "launch",
            Self::NetCrossed => "net_crossed",
            Self::BounceRobotCourt => "bounce_robot_court",
            Self::BounceOpponentCourt => "bounce_opponent_court",
            Self::RacketContact => "racket_contact",
            Self::BodyContact => "body_contact",
            Self::NetContact => "net_contact",
            Self::FloorContact => "floor_contact",
            Self::OutOfBounds => "out_of_bounds",
        }
    }

    /// Contacts with anything other than air or the net plane.
    pub fn is_surface_contact(self) -> bool {
        !matches!(self, Self::Launch | Self::NetCrossed)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RallyEvent {
    pub kind: EventKind,
    pub time: f64,
    pub ball: BallState,
}

impl RallyEvent {
    pub fn new(kind: EventKind, time: f64, ball: BallState) -> Self {
        Self { kind, time, ball }
    }
}

/// Why an episode ended before (or instead of) reaching the next state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    /// The inbound ball touched the opponent court first.
    WrongFirstBounce,
    /// The inbound ball hit the net.
    InboundNet,
    /// The inbound ball left the play area without touching the table.
    InboundMissedTable,
    /// The robot struck the ball before it bounced on the robot court.
    EarlyHit,
    /// The ball bounced twice on the robot court.
    DoubleBounce,
    /// The robot did not reach the ball.
    MissedCatch,
    /// The ball touched the robot's body.
    BodyContact,
    /// The return hit the net.
    ReturnIntoNet,
    /// The return landed on the robot's own court.
    ReturnOwnCourt,
    /// The return missed the opponent court.
    MissedOpponentCourt,
    /// The racket touched the ball a second time.
    DoubleHit,
    /// An event arrived that implies a skipped trajectory state.
    SkippedState,
    /// The opponent did not return the ball (loop continuation only).
    OpponentMissed,
    /// Episode time limit.
    Timeout,
}

impl TerminalReason {
    pub const ALL: [TerminalReason; 14] = [
        Self::WrongFirstBounce,
        Self::InboundNet,
        Self::InboundMissedTable,
        Self::EarlyHit,
        Self::DoubleBounce,
        Self::MissedCatch,
        Self::BodyContact,
        Self::ReturnIntoNet,
        Self::ReturnOwnCourt,
        Self::MissedOpponentCourt,
        Self::DoubleHit,
        Self::SkippedState,
        Self::OpponentMissed,
        Self::Timeout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::WrongFirstBounce => "wrong_first_bounce",
            Self::InboundNet => "inbound_net",
            Self::InboundMissedTable => "inbound_missed_table",
            Self::EarlyHit => "early_hit",
            Self::DoubleBounce => "double_bounce",
            Self::MissedCatch => "missed_catch",
            Self::BodyContact => "body_contact",
            Self::ReturnIntoNet => "return_into_net",
            Self::ReturnOwnCourt => "return_own_court",
            Self::MissedOpponentCourt => "missed_opponent_court",
            Self::DoubleHit => "double_hit",
            Self::SkippedState => "skipped_state",
            Self::OpponentMissed => "opponent_missed",
            Self::Timeout => "timeout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for TerminalReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    Next(TrajectoryState),
    Terminal(TerminalReason),
}

/// Applies one event to the rally state machine.
///
/// Instantaneous states accept no events; they leave through
/// [`auto_advance`] at the next control step. `T0` is the exception: the
/// launch that starts the rally moves it to `T01`.
pub fn advance_state(cur: TrajectoryState, ev: &RallyEvent) -> Transition {
    use EventKind as E;
    use TerminalReason as R;
    use TrajectoryState as S;
    use Transition::{Next, Terminal};

    if ev.kind == E::BodyContact {
        return Terminal(R::BodyContact);
    }
    match (cur, ev.kind) {
        (S::T0, E::Launch) => Next(S::T01),

        (S::T01, E::NetCrossed) => Next(S::T01),
        (S::T01, E::BounceRobotCourt) => Next(S::T1),
        (S::T01, E::BounceOpponentCourt) => Terminal(R::WrongFirstBounce),
        (S::T01, E::NetContact) => Terminal(R::InboundNet),
        (S::T01, E::FloorContact | E::OutOfBounds) => Terminal(R::InboundMissedTable),
        (S::T01, E::RacketContact) => Terminal(R::EarlyHit),

        (S::T12, E::RacketContact) => Next(S::T2),
        (S::T12, E::BounceRobotCourt) => Terminal(R::DoubleBounce),
        (S::T12, E::NetCrossed | E::NetContact | E::BounceOpponentCourt | E::FloorContact | E::OutOfBounds) => {
            Terminal(R::MissedCatch)
        }

        (S::T23, E::NetCrossed) => Next(S::T23),
        (S::T23, E::BounceOpponentCourt) => Next(S::T3),
        (S::T23, E::NetContact) => Terminal(R::ReturnIntoNet),
        (S::T23, E::BounceRobotCourt) => Terminal(R::ReturnOwnCourt),
        (S::T23, E::FloorContact | E::OutOfBounds) => Terminal(R::MissedOpponentCourt),
        (S::T23, E::RacketContact) => Terminal(R::DoubleHit),

        (S::T30, E::Launch) => Next(S::T0),
        (S::T30, E::NetCrossed) => Next(S::T30),
        (S::T30, _) => Terminal(R::OpponentMissed),

        _ => Terminal(R::SkippedState),
    }
}

/// Successor of an instantaneous state after it has been held for one
/// control step; `None` for continuous states.
pub fn auto_advance(cur: TrajectoryState) -> Option<TrajectoryState> {
    cur.is_instantaneous().then(|| cur.successor())
}

/// Table dimensions and placement (ITTF defaults).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableGeometry {
    pub length: f64,
    pub width: f64,
    /// Height of the playing surface above the floor.
    pub height: f64,
    /// Net height above the playing surface.
    pub net_height: f64,
    /// How far the net extends beyond each side line.
    pub net_overhang: f64,
    /// Margin around the table beyond which the ball is out of bounds.
    pub bounds_margin: f64,
}

impl Default for TableGeometry {
    fn default() -> Self {
        Self { length: 2.74, width: 1.525, height: 0.76, net_height: 0.1525, net_overhang: 0.1525, bounds_margin: 3.0 }
    }
}

impl TableGeometry {
    pub fn over_table(&self, x: f64, y: f64) -> bool {
        x.abs() <= self.length / 2.0 && y.abs() <= self.width / 2.0
    }

    pub fn net_top(&self) -> f64 {
        self.height + self.net_height
    }

    pub fn in_bounds(&self, p: &crate::Vec3) -> bool {
        p.x.abs() <= self.length / 2.0 + self.bounds_margin && p.y.abs() <= self.width / 2.0 + self.bounds_margin
    }

    pub fn is_valid(&self) -> bool {
        [self.length, self.width, self.height, self.net_height].iter().all(|v| *v > 0.0 && v.is_finite())
            && self.net_overhang >= 0.0
            && self.bounds_margin > 0.0
    }
}

/// Collision flags reported by the arena for the current step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ContactFlags {
    pub racket: bool,
    pub body: bool,
}

/// Classifies the motion between two consecutive integrator states.
///
/// `t` is the time span `(t_prev, t_next)` of the step; `radius` the ball
/// radius. Robot-side contacts reported through `flags` take precedence;
/// among geometric crossings the earliest one within the step wins.
pub fn classify_event(
    prev: &BallState,
    next: &BallState,
    t: (f64, f64),
    geom: &TableGeometry,
    radius: f64,
    flags: ContactFlags,
) -> Option<RallyEvent> {
    if flags.body {
        return Some(RallyEvent::new(EventKind::BodyContact, t.1, *next));
    }
    if flags.racket {
        return Some(RallyEvent::new(EventKind::RacketContact, t.1, *next));
    }
    let dt = t.1 - t.0;
    let at = |alpha: f64| (t.0 + alpha * dt, prev.lerp(next, alpha));

    let hit = crate::dynamics::detect_surface(prev, next, t.0, dt, geom, radius);
    if let Some(hit) = hit {
        let alpha = if dt > 0.0 { (hit.time - t.0) / dt } else { 0.0 };
        let (time, ball) = at(alpha);
        return Some(RallyEvent::new(classify_hit(hit.surface, &ball, geom, radius), time, ball));
    }
    if !geom.in_bounds(&next.p) {
        return Some(RallyEvent::new(EventKind::OutOfBounds, t.1, *next));
    }
    None
}

/// Event kind for a surface crossing at `ball`.
pub fn classify_hit(surface: crate::dynamics::Surface, ball: &BallState, geom: &TableGeometry, radius: f64) -> EventKind {
    match surface {
        crate::dynamics::Surface::Table => {
            if ball.p.x < 0.0 {
                EventKind::BounceRobotCourt
            } else {
                EventKind::BounceOpponentCourt
            }
        }
        crate::dynamics::Surface::NetPlane => classify_net_plane(ball, geom, radius),
        crate::dynamics::Surface::Floor => EventKind::FloorContact,
    }
}

/// Whether a ball crossing `x = 0` at `ball` clears the net.
pub fn classify_net_plane(ball: &BallState, geom: &TableGeometry, radius: f64) -> EventKind {
    let z = ball.p.z;
    let within_net_span = ball.p.y.abs() <= geom.width / 2.0 + geom.net_overhang + radius;
    if z < geom.height {
        // Passing under the playing surface.
        EventKind::OutOfBounds
    } else if within_net_span && z < geom.net_top() + radius {
        EventKind::NetContact
    } else {
        EventKind::NetCrossed
    }
}

/// A valid inbound trajectory starts with a launch, crosses the net and
/// first touches the robot court; only net crossings may occur in between.
/// Events after the robot-court bounce are ignored.
pub fn is_valid_rally(events: &[RallyEvent]) -> bool {
    is_valid_rally_kinds(events.iter().map(|e| e.kind))
}

pub fn is_valid_rally_kinds(kinds: impl IntoIterator<Item = EventKind>) -> bool {
    let mut it = kinds.into_iter();
    if it.next() != Some(EventKind::Launch) {
        return false;
    }
    let mut crossed = false;
    for kind in it {
        match kind {
            EventKind::NetCrossed => crossed = true,
            EventKind::BounceRobotCourt => return crossed,
            _ => return false,
        }
    }
    false
}
