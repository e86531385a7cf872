//! Serial kinematic chain carrying the racket, with per-joint PD control.
//!
//! Joints are kinematic: a PD torque drives a unit-inertia-scaled joint
//! acceleration, velocities and positions are integrated with semi-implicit
//! Euler and clamped to their limits. There is no link dynamics coupling.

use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::Vec3;

pub const N_JOINTS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub kind: JointKind,
    /// Joint axis in the parent frame.
    pub axis: [f64; 3],
    /// Translation from the previous joint frame to this joint.
    pub origin: [f64; 3],
    pub q_min: f64,
    pub q_max: f64,
    pub home: f64,
    pub qd_max: f64,
    pub tau_max: f64,
    pub kp: f64,
    pub kd: f64,
    /// Effective inertia (or mass for prismatic joints) seen by the PD loop.
    pub inertia: f64,
}

impl JointSpec {
    fn new(kind: JointKind, axis: [f64; 3], origin: [f64; 3], range: (f64, f64), home: f64) -> Self {
        let qd_max = match kind {
            JointKind::Prismatic => 3.0,
            JointKind::Revolute => 8.0,
        };
        Self { kind, axis, origin, q_min: range.0, q_max: range.1, home, qd_max, tau_max: 2.0, kp: 4.0, kd: 0.4, inertia: 0.01 }
    }

    pub fn is_locked(&self) -> bool {
        self.q_min == self.q_max
    }

    /// Pins the joint at `value`.
    pub fn lock_at(&mut self, value: f64) {
        self.q_min = value;
        self.q_max = value;
        self.home = value;
    }

    /// Affine map from `[-1, 1]` to `[q_min, q_max]`.
    pub fn target_from_action(&self, a: f64) -> f64 {
        self.q_min + (a.clamp(-1.0, 1.0) + 1.0) * 0.5 * (self.q_max - self.q_min)
    }

    /// Inverse of [`JointSpec::target_from_action`].
    pub fn action_from_target(&self, q: f64) -> f64 {
        if self.is_locked() {
            0.0
        } else {
            2.0 * (q - self.q_min) / (self.q_max - self.q_min) - 1.0
        }
    }
}

/// PD gains for one joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdGains {
    pub kp: f64,
    pub kd: f64,
    pub tau_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    /// Base position in the world frame.
    pub base: [f64; 3],
    pub joints: Vec<JointSpec>,
    /// Racket center offset from the last joint frame.
    pub tool_offset: [f64; 3],
    /// Racket face normal in the last joint frame.
    pub racket_normal: [f64; 3],
    pub racket_radius: f64,
    /// Capsule radius of the arm links for body-contact checks.
    pub link_radius: f64,
}

impl Default for ChainConfig {
    /// Lateral rail, vertical carriage, then yaw / shoulder / elbow / roll /
    /// wrist revolute joints, standing behind the robot end of the table.
    fn default() -> Self {
        use JointKind::{Prismatic, Revolute};
        let joints = vec![
            JointSpec::new(Prismatic, [0.0, 1.0, 0.0], [0.0, 0.0, 0.0], (-0.75, 0.75), 0.0),
            JointSpec::new(Prismatic, [0.0, 0.0, 1.0], [0.0, 0.0, 0.0], (0.75, 1.35), 1.0),
            JointSpec::new(Revolute, [0.0, 0.0, 1.0], [0.0, 0.0, 0.0], (-1.2, 1.2), 0.0),
            JointSpec::new(Revolute, [0.0, 1.0, 0.0], [0.0, 0.0, 0.0], (-0.8, 0.8), 0.0),
            JointSpec::new(Revolute, [0.0, 1.0, 0.0], [0.25, 0.0, 0.0], (-1.0, 1.0), 0.0),
            JointSpec::new(Revolute, [1.0, 0.0, 0.0], [0.2, 0.0, 0.0], (-1.5, 1.5), 0.0),
            JointSpec::new(Revolute, [0.0, 1.0, 0.0], [0.0, 0.0, 0.0], (-0.8, 0.8), 0.0),
        ];
        Self {
            base: [-2.12, 0.0, 0.0],
            joints,
            tool_offset: [0.12, 0.0, 0.0],
            racket_normal: [1.0, 0.0, 0.0],
            racket_radius: 0.085,
            link_radius: 0.03,
        }
    }
}

impl ChainConfig {
    /// Default chain with elbow, roll and wrist locked: two rails plus yaw and
    /// shoulder pitch.
    pub fn four_joint() -> Self {
        let mut c = Self::default();
        for j in &mut c.joints[4..] {
            j.lock_at(0.0);
        }
        c
    }

    pub fn home(&self) -> [f64; N_JOINTS] {
        let mut q = [0.0; N_JOINTS];
        for (qi, j) in q.iter_mut().zip(&self.joints) {
            *qi = j.home;
        }
        q
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.joints.len() != N_JOINTS {
            return Err(format!("chain must have exactly {N_JOINTS} joints, found {}", self.joints.len()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            let axis = Vec3::from(j.axis);
            if !(axis.norm() > 0.0) {
                return Err(format!("joint {i}: zero axis"));
            }
            if !(j.q_min <= j.q_max) || !(j.q_min..=j.q_max).contains(&j.home) {
                return Err(format!("joint {i}: inconsistent limits or home"));
            }
            if !(j.qd_max > 0.0 && j.tau_max > 0.0 && j.inertia > 0.0 && j.kp >= 0.0 && j.kd >= 0.0) {
                return Err(format!("joint {i}: gains and limits must be positive"));
            }
        }
        if !(Vec3::from(self.racket_normal).norm() > 0.0) || !(self.racket_radius > 0.0) || self.link_radius < 0.0 {
            return Err("racket normal, racket radius and link radius must be positive".into());
        }
        Ok(())
    }
}

/// Joint positions and velocities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub q: [f64; N_JOINTS],
    pub qd: [f64; N_JOINTS],
}

impl RobotState {
    pub fn at_home(chain: &ChainConfig) -> Self {
        Self { q: chain.home(), qd: [0.0; N_JOINTS] }
    }

    pub fn within_limits(&self, chain: &ChainConfig) -> bool {
        self.q.iter().zip(&chain.joints).all(|(q, j)| *q >= j.q_min && *q <= j.q_max)
    }
}

/// Racket pose and velocity in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RacketPose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
    pub linear_velocity: Vec3,
}

impl RacketPose {
    /// Quaternion as `[w, x, y, z]`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }
}

/// Full forward-kinematics result.
#[derive(Debug, Clone)]
pub struct ChainPose {
    pub racket: RacketPose,
    /// World-frame unit normal of the racket face.
    pub racket_normal: Vec3,
    /// World position of every joint, base first.
    pub joint_points: [Vec3; N_JOINTS + 1],
}

impl ChainPose {
    /// Link segments treated as capsules for body contact: the carriage
    /// column, the upper arm and the forearm. The wrist-to-racket handle is
    /// excluded.
    pub fn link_segments(&self) -> impl Iterator<Item = (Vec3, Vec3)> + '_ {
        // joint_points[2] is the carriage top (after both rails); the column
        // runs from the floor below it.
        let top = self.joint_points[2];
        let column = (Vec3::new(top.x, top.y, 0.0), top);
        let arm = (3..N_JOINTS)
            .map(move |i| (self.joint_points[i], self.joint_points[i + 1]))
            .filter(|(a, b)| (a - b).norm() > 1e-9);
        std::iter::once(column).chain(arm)
    }
}

pub fn forward_kinematics(chain: &ChainConfig, q: &[f64; N_JOINTS], qd: &[f64; N_JOINTS]) -> ChainPose {
    let mut t = Isometry3::from_parts(Translation3::from(Vec3::from(chain.base)), UnitQuaternion::identity());
    let mut points = [Vec3::zeros(); N_JOINTS + 1];
    points[0] = t.translation.vector;
    let mut axes = [(JointKind::Revolute, Vec3::zeros(), Vec3::zeros()); N_JOINTS];
    for (i, j) in chain.joints.iter().enumerate() {
        t *= Translation3::from(Vec3::from(j.origin));
        let local_axis = Unit::new_normalize(Vec3::from(j.axis));
        let world_axis = t.rotation * local_axis.into_inner();
        axes[i] = (j.kind, world_axis, t.translation.vector);
        match j.kind {
            JointKind::Revolute => t *= UnitQuaternion::from_axis_angle(&local_axis, q[i]),
            JointKind::Prismatic => t *= Translation3::from(local_axis.into_inner() * q[i]),
        }
        points[i + 1] = t.translation.vector;
    }
    let tool = t * Translation3::from(Vec3::from(chain.tool_offset));
    let position = tool.translation.vector;
    let mut linear_velocity = Vec3::zeros();
    for ((kind, axis, origin), rate) in axes.iter().zip(qd) {
        linear_velocity += match kind {
            JointKind::Revolute => axis.cross(&(position - origin)) * *rate,
            JointKind::Prismatic => axis * *rate,
        };
    }
    let racket_normal = (tool.rotation * Vec3::from(chain.racket_normal)).normalize();
    ChainPose {
        racket: RacketPose { position, orientation: tool.rotation, linear_velocity },
        racket_normal,
        joint_points: points,
    }
}

/// `tau_i = kp (q_target - q) - kd qd`, clamped to `±tau_max`.
pub fn pd_control(q: &[f64], qd: &[f64], q_target: &[f64], gains: &[PdGains]) -> Vec<f64> {
    q.iter()
        .zip(qd)
        .zip(q_target)
        .zip(gains)
        .map(|(((q, qd), qt), g)| (g.kp * (qt - q) - g.kd * qd).clamp(-g.tau_max, g.tau_max))
        .collect()
}

/// Advances the joints by `dt` under PD control toward `q_target`; returns
/// the applied torques.
pub fn integrate_joints(chain: &ChainConfig, robot: &mut RobotState, q_target: &[f64; N_JOINTS], dt: f64) -> [f64; N_JOINTS] {
    let mut tau = [0.0; N_JOINTS];
    for (i, j) in chain.joints.iter().enumerate() {
        if j.is_locked() {
            robot.q[i] = j.q_min;
            robot.qd[i] = 0.0;
            continue;
        }
        let t = (j.kp * (q_target[i] - robot.q[i]) - j.kd * robot.qd[i]).clamp(-j.tau_max, j.tau_max);
        tau[i] = t;
        let mut qd = (robot.qd[i] + t / j.inertia * dt).clamp(-j.qd_max, j.qd_max);
        let mut q = robot.q[i] + qd * dt;
        if q < j.q_min {
            q = j.q_min;
            qd = 0.0;
        } else if q > j.q_max {
            q = j.q_max;
            qd = 0.0;
        }
        robot.q[i] = q;
        robot.qd[i] = qd;
    }
    tau
}

/// Distance from `p` to the segment `a`–`b`.
pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}
