//! Run configuration: one TOML file covering every module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spinrally::arena::{ArenaConfig, N_JOINTS};
use spinrally::learner::TrainConfig;
use spinrally::real2sim::Real2SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed for every random stream in the run.
    pub seed: u64,
    /// Output directory.
    pub out: PathBuf,
    /// Joint indices pinned at zero on top of `arena.chain`.
    pub locked_joints: Vec<usize>,
    pub arena: ArenaConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub real2sim: Real2SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("runs/default"),
            locked_joints: Vec::new(),
            arena: ArenaConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            real2sim: Real2SimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config always serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        if let Some(j) = self.locked_joints.iter().find(|j| **j >= N_JOINTS) {
            return Err(format!("locked joint index {j} out of range"));
        }
        if self.eval.episodes == 0 {
            return Err("eval.episodes must be positive".into());
        }
        if self.real2sim.window < 3 || self.real2sim.window % 2 == 0 {
            return Err("real2sim.window must be odd and at least 3".into());
        }
        self.arena.validate()?;
        self.train.validate()
    }

    /// Arena with `locked_joints` applied.
    pub fn resolved_arena(&self) -> ArenaConfig {
        let mut arena = self.arena.clone();
        for &j in &self.locked_joints {
            arena.chain.joints[j].lock_at(0.0);
        }
        arena
    }

    /// SHA-256 of the canonical JSON form. Stored in checkpoints.
    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("run config always serializes");
        Sha256::digest(&json).into()
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
