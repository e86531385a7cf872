//! Curriculum PPO.
//!
//! Training runs three stages (catch, return, return-to-target) that differ
//! only in the reward column. Network weights carry over between stages; the
//! observation normaliser keeps its statistics but has its sample count
//! reset so it adapts to the new stage's state distribution.

pub mod checkpoint;
pub mod curriculum;
pub mod gae;
pub mod moments;
pub mod net;
pub mod ppo;

use rand::Rng;
use thiserror::Error;

use crate::arena::{Action, ArenaError, Observation, N_JOINTS, OBS_DIM};

pub use checkpoint::{Checkpoint, CheckpointError};
pub use curriculum::{run_curriculum, EpochMetrics, TrainConfig, TrainOutcome};
pub use gae::compute_gae;
pub use moments::RunningMoments;
pub use net::{NetArch, PolicyNet, PolicyOutput};
pub use ppo::{ppo_update, Adam, Dataset, PpoConfig, UpdateStats};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("parameters became non-finite during an update")]
    DivergedUpdate,
    #[error("update called with an empty dataset")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("metrics output: {0}")]
    Csv(#[from] csv::Error),
}

/// Network plus the observation normaliser it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: PolicyNet,
    pub moments: RunningMoments,
}

impl Policy {
    pub fn new<R: Rng>(arch: NetArch, init_log_std: f64, rng: &mut R) -> Self {
        Self { net: PolicyNet::init(arch, init_log_std, rng), moments: RunningMoments::new(arch.obs_dim) }
    }

    pub fn normalize(&self, obs: &Observation) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        self.moments.normalize_into(obs.as_slice(), &mut out);
        out
    }

    pub fn evaluate(&self, obs: &Observation) -> PolicyOutput {
        self.net.forward(&self.normalize(obs))
    }

    /// Deterministic action: the mean.
    pub fn act_mean(&self, obs: &Observation) -> Action {
        let out = self.evaluate(obs);
        std::array::from_fn(|i| out.mean[i])
    }

    /// Stochastic action clamped to `[-1, 1]`.
    pub fn act_sample<R: Rng>(&self, obs: &Observation, rng: &mut R) -> Action {
        let out = self.evaluate(obs);
        let (_, clamped, _) = net::sample_action(&out.mean, &out.log_std, rng);
        std::array::from_fn(|i| clamped[i])
    }
}

pub fn default_arch(width: usize, depth: usize) -> NetArch {
    NetArch { obs_dim: OBS_DIM, act_dim: N_JOINTS, width, depth }
}
