//! Stage-indexed rally reward.
//!
//! The per-state reward for every curriculum stage comes from an 8×3 matrix
//! `R`; the current trajectory state selects a row (one-hot product) and the
//! stage selects the column. Rows for the approach phases are shaped by the
//! racket–ball distance, the hit row by the racket's x-velocity, and the
//! final rows by ball–target distance and landing error. A performance
//! penalty on torque, action jitter and unwanted contacts is added every
//! step.

use serde::{Deserialize, Serialize};

use crate::rally::TrajectoryState;

/// Reward hyperparameters. Defaults are the published constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConstants {
    pub a21: f64,
    pub a22: f64,
    pub a23: f64,
    pub a31: f64,
    pub a32: f64,
    pub a33: f64,
    pub a41: f64,
    pub a42: f64,
    pub a43: f64,
    pub a51: f64,
    pub a52: f64,
    pub a53: f64,
    pub a63: f64,
    pub a73: f64,
    pub b73: f64,
    /// Torque penalty weight.
    pub c: f64,
    /// Action-change penalty weight.
    pub d: f64,
    /// Unwanted-contact penalty weight.
    pub e: f64,
    /// Symmetric clip applied to the racket x-velocity at the hit.
    pub v_rhb_clip: f64,
}

impl Default for RewardConstants {
    fn default() -> Self {
        Self {
            a21: 1.0,
            a22: 0.25,
            a23: 0.1,
            a31: 10.0,
            a32: 4.0,
            a33: 1.0,
            a41: 1.0,
            a42: 0.25,
            a43: 0.1,
            a51: 25.0,
            a52: 50.0,
            a53: 10.0,
            a63: 1.0,
            a73: 30.0,
            b73: 40.0,
            c: 0.02,
            d: 0.02,
            e: 0.1,
            v_rhb_clip: 10.0,
        }
    }
}

/// Geometric inputs to the reward matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardFeatures {
    /// Racket–ball distance, m.
    pub d_rb: f64,
    /// Ball–target distance, m.
    pub d_bt: f64,
    /// Racket x-velocity at ball contact, m/s (signed).
    pub v_rhb_x: f64,
    /// Landing point to target error, m.
    pub e_lt: f64,
}

/// Curriculum stage, 1 to 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct StageIndex(u8);

impl StageIndex {
    pub const CATCH: StageIndex = StageIndex(1);
    pub const RETURN: StageIndex = StageIndex(2);
    pub const TARGET: StageIndex = StageIndex(3);
    pub const ALL: [StageIndex; 3] = [Self::CATCH, Self::RETURN, Self::TARGET];

    pub fn new(stage: u8) -> Option<Self> {
        (1..=3).contains(&stage).then_some(Self(stage))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based column in the reward matrix.
    pub fn column(self) -> usize {
        self.0 as usize - 1
    }
}

impl TryFrom<u8> for StageIndex {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        StageIndex::new(v).ok_or_else(|| format!("stage must be 1, 2 or 3, got {v}"))
    }
}

impl From<StageIndex> for u8 {
    fn from(s: StageIndex) -> u8 {
        s.0
    }
}

pub type RewardMatrix = [[f64; 3]; 8];

fn inverse_square_falloff(d: f64) -> f64 {
    let q = 1.0 + d * d;
    1.0 / (q * q)
}

/// Builds the reward matrix, rows in trajectory-state order.
pub fn build_reward_matrix(f: &RewardFeatures, k: &RewardConstants) -> RewardMatrix {
    let near = inverse_square_falloff(f.d_rb);
    let v_hit = f.v_rhb_x.clamp(-k.v_rhb_clip, k.v_rhb_clip);
    [
        [0.0, 0.0, 0.0],
        [k.a21 * near, k.a22 * near, k.a23 * near],
        [k.a31, k.a32, k.a33],
        [k.a41 * near, k.a42 * near, k.a43 * near],
        [k.a51, k.a52 + v_hit, k.a53],
        [0.0, 0.0, k.a63 * inverse_square_falloff(f.d_bt)],
        [0.0, 0.0, k.a73 + k.b73 * inverse_square_falloff(f.e_lt)],
        [0.0, 0.0, 0.0],
    ]
}

/// `(one_hot(state) · R)[stage]`.
pub fn stage_reward(state: TrajectoryState, f: &RewardFeatures, stage: StageIndex, k: &RewardConstants) -> f64 {
    let r = build_reward_matrix(f, k);
    let mut one_hot = [0.0; 8];
    one_hot[state.index()] = 1.0;
    one_hot.iter().zip(r.iter()).map(|(t, row)| t * row[stage.column()]).sum()
}

/// Torque, jitter and contact penalty (non-positive).
pub fn performance_reward(torques: &[f64], action: &[f64], prev_action: &[f64], contacts: u32, k: &RewardConstants) -> f64 {
    debug_assert_eq!(action.len(), prev_action.len());
    let effort: f64 = torques.iter().map(|t| t.abs()).sum();
    let jitter: f64 = action.iter().zip(prev_action).map(|(a, b)| (a - b) * (a - b)).sum();
    -(k.c * effort + k.d * jitter + k.e * contacts as f64)
}

pub fn total_reward(stage_part: f64, performance_part: f64) -> f64 {
    stage_part + performance_part
}
