//! The 37-value policy observation.

use crate::arena::chain::N_JOINTS;
use crate::rally::TrajectoryState;

pub const OBS_DIM: usize = 37;

/// Layout offsets.
pub mod layout {
    pub const Q: usize = 0;
    pub const QD: usize = 7;
    pub const RACKET_POS: usize = 14;
    pub const RACKET_QUAT: usize = 17;
    pub const RACKET_VEL: usize = 21;
    pub const BALL_POS: usize = 24;
    pub const BALL_VEL: usize = 27;
    pub const TARGET: usize = 30;
    pub const STATE_INDEX: usize = 32;
    pub const ONE_HOT: usize = 33;
    pub const END: usize = 37;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

/// Structured view of an observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationParts {
    pub q: [f64; N_JOINTS],
    pub qd: [f64; N_JOINTS],
    pub racket_pos: [f64; 3],
    /// `[w, x, y, z]`
    pub racket_quat: [f64; 4],
    pub racket_vel: [f64; 3],
    pub ball_pos: [f64; 3],
    pub ball_vel: [f64; 3],
    pub target: [f64; 2],
    pub state: TrajectoryState,
}

fn put<const N: usize>(dst: &mut [f64; OBS_DIM], at: usize, src: &[f64; N]) {
    dst[at..at + N].copy_from_slice(src);
}

fn take<const N: usize>(src: &[f64; OBS_DIM], at: usize) -> [f64; N] {
    let mut out = [0.0; N];
    out.copy_from_slice(&src[at..at + N]);
    out
}

impl ObservationParts {
    pub fn build(&self) -> Observation {
        use layout::*;
        let mut o = [0.0; OBS_DIM];
        put(&mut o, Q, &self.q);
        put(&mut o, QD, &self.qd);
        put(&mut o, RACKET_POS, &self.racket_pos);
        put(&mut o, RACKET_QUAT, &self.racket_quat);
        put(&mut o, RACKET_VEL, &self.racket_vel);
        put(&mut o, BALL_POS, &self.ball_pos);
        put(&mut o, BALL_VEL, &self.ball_vel);
        put(&mut o, TARGET, &self.target);
        o[STATE_INDEX] = self.state.index() as f64;
        if let Some(slot) = self.state.continuous_slot() {
            o[ONE_HOT + slot] = 1.0;
        }
        Observation(o)
    }
}

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Splits the flat vector back into its fields. Returns `None` when the
    /// state index or one-hot block is malformed.
    pub fn parse(&self) -> Option<ObservationParts> {
        use layout::*;
        let o = &self.0;
        let idx = o[STATE_INDEX];
        if idx.fract() != 0.0 || !(0.0..8.0).contains(&idx) {
            return None;
        }
        let state = TrajectoryState::from_index(idx as usize)?;
        let one_hot: [f64; 4] = take(o, ONE_HOT);
        let mut expected = [0.0; 4];
        if let Some(slot) = state.continuous_slot() {
            expected[slot] = 1.0;
        }
        if one_hot != expected {
            return None;
        }
        Some(ObservationParts {
            q: take(o, Q),
            qd: take(o, QD),
            racket_pos: take(o, RACKET_POS),
            racket_quat: take(o, RACKET_QUAT),
            racket_vel: take(o, RACKET_VEL),
            ball_pos: take(o, BALL_POS),
            ball_vel: take(o, BALL_VEL),
            target: take(o, TARGET),
            state,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parts(state: TrajectoryState) -> ObservationParts {
        ObservationParts {
            q: [0.1, 1.0, 0.2, 0.3, 0.4, 0.5, 0.6],
            qd: [0.0; 7],
            racket_pos: [-1.5, 0.0, 1.0],
            racket_quat: [1.0, 0.0, 0.0, 0.0],
            racket_vel: [0.0; 3],
            ball_pos: [0.5, 0.1, 1.1],
            ball_vel: [-5.0, 0.0, 1.0],
            target: [0.8, -0.2],
            state,
        }
    }

    #[test]
    fn layout_adds_up() {
        assert_eq!(layout::END, OBS_DIM);
        assert_eq!(7 + 7 + 3 + 4 + 3 + 3 + 3 + 2 + 1 + 4, OBS_DIM);
    }

    #[test]
    fn one_hot_block() {
        let o = parts(TrajectoryState::T0).build();
        assert_eq!(&o.0[layout::ONE_HOT..], &[0.0; 4]);
        let o = parts(TrajectoryState::T12).build();
        assert_eq!(&o.0[layout::ONE_HOT..], &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(o.0[layout::STATE_INDEX], 3.0);
    }

    #[test]
    fn build_parse_rebuild() {
        for s in TrajectoryState::ALL {
            let o = parts(s).build();
            assert_eq!(o.parse().unwrap().build(), o);
        }
    }
}
