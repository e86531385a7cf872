//! The staged training loop.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::gae::compute_gae;
use super::moments::RunningMoments;
use super::net::sample_action;
use super::ppo::{ppo_update, Adam, Dataset, PpoConfig};
use super::{default_arch, LearnerError, Policy};
use crate::arena::{Action, ArenaConfig, VecEnv, N_JOINTS, OBS_DIM};
use crate::exec::Exec;
use crate::reward::StageIndex;
use crate::seedgen::{GeneratorPool, GeneratorStats, RolloutSettings, SeedBuffer, SeedRanges};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Epochs per stage.
    pub epochs: [usize; 3],
    /// Control steps collected per environment per epoch.
    pub horizon: usize,
    pub train_envs: usize,
    pub generator_envs: usize,
    /// Candidates each generator environment tries per epoch.
    pub generator_tries: usize,
    pub hidden_width: usize,
    pub hidden_depth: usize,
    pub init_log_std: f64,
    pub ppo: PpoConfig,
    /// Fraction of the learning rate left at the end of the last stage.
    pub final_lr_fraction: f64,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: [200, 200, 200],
            horizon: 64,
            train_envs: 64,
            generator_envs: 192,
            generator_tries: 1,
            hidden_width: 256,
            hidden_depth: 2,
            init_log_std: -0.5,
            ppo: PpoConfig::default(),
            final_lr_fraction: 0.0,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.horizon == 0 || self.train_envs == 0 || self.hidden_width == 0 || self.hidden_depth == 0 {
            return Err("horizon, train_envs and network sizes must be positive".into());
        }
        if !self.init_log_std.is_finite() || !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err("init_log_std must be finite and final_lr_fraction in [0, 1]".into());
        }
        self.ppo.validate()
    }

    /// Learning rate for epoch `e` of stage `stage`: constant, then a linear
    /// decay across the final stage.
    pub fn learning_rate(&self, stage: StageIndex, e: usize) -> f64 {
        let lr = self.ppo.learning_rate;
        if stage != StageIndex::TARGET || self.epochs[2] == 0 {
            return lr;
        }
        let frac = e as f64 / self.epochs[2] as f64;
        lr * (1.0 - frac * (1.0 - self.final_lr_fraction))
    }
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub stage: u8,
    /// Mean per-step reward over the epoch's transitions.
    pub mean_reward: f64,
    /// Episodes finished during the epoch.
    pub episodes: usize,
    pub catch_rate: f64,
    pub return_rate: f64,
    pub return_after_catch: f64,
    /// Mean landing error over returned episodes; NaN when none returned.
    pub target_error: f64,
    pub mean_episode_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub learning_rate: f64,
    /// Share of finished episodes that started from a random fallback ball.
    pub fallback_rate: f64,
    pub generator_valid_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub metrics: Vec<EpochMetrics>,
    pub generator: GeneratorStats,
}

struct Collected {
    data: Dataset,
    raw_obs: Vec<f64>,
    reward_sum: f64,
    episodes: Vec<crate::arena::EpisodeSummary>,
}

/// Collects `horizon` steps from every environment with a fixed policy
/// snapshot and builds the training dataset.
fn collect(policy: &Policy, venv: &mut VecEnv, buffer: &SeedBuffer, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Collected, LearnerError> {
    let n = venv.len();
    let h = cfg.horizon;
    let exec = cfg.exec;
    let mut norm_obs = vec![vec![0.0; OBS_DIM]; n * h];
    let mut raw_actions = vec![[0.0; N_JOINTS]; n * h];
    let mut log_probs = vec![0.0; n * h];
    let mut values = vec![0.0; n * h];
    let mut rewards = vec![0.0; n * h];
    let mut dones = vec![false; n * h];
    let mut raw_obs = Vec::with_capacity(n * h * OBS_DIM);
    let mut episodes = Vec::new();
    let mut reward_sum = 0.0;

    for t in 0..h {
        let obs = venv.observations().to_vec();
        let outs = exec.map_range(n, |i| {
            let x = policy.normalize(&obs[i]);
            (x, policy.net.forward(&x))
        });
        let mut actions: Vec<Action> = Vec::with_capacity(n);
        for (i, (x, out)) in outs.into_iter().enumerate() {
            let k = i * h + t;
            let (raw, clamped, logp) = sample_action(&out.mean, &out.log_std, rng);
            norm_obs[k].copy_from_slice(&x);
            raw_actions[k].copy_from_slice(&raw);
            log_probs[k] = logp;
            values[k] = out.value;
            actions.push(std::array::from_fn(|j| clamped[j]));
            raw_obs.extend_from_slice(obs[i].as_slice());
        }
        let steps = venv.step(exec, &actions, buffer)?;
        for (i, s) in steps.into_iter().enumerate() {
            let k = i * h + t;
            rewards[k] = s.reward;
            dones[k] = s.done;
            reward_sum += s.reward;
            if let Some(ep) = s.info.episode {
                episodes.push(ep);
            }
        }
    }

    let last = venv.observations().to_vec();
    let bootstrap = exec.map_range(n, |i| policy.evaluate(&last[i]).value);
    let mut data = Dataset::new(OBS_DIM, N_JOINTS);
    for i in 0..n {
        let span = i * h..(i + 1) * h;
        let (adv, ret) = compute_gae(&rewards[span.clone()], &values[span.clone()], &dones[span.clone()], bootstrap[i], cfg.ppo.gamma, cfg.ppo.lambda);
        for (t, k) in span.enumerate() {
            data.push(&norm_obs[k], &raw_actions[k], log_probs[k], adv[t], ret[t]);
        }
    }
    Ok(Collected { data, raw_obs, reward_sum, episodes })
}

fn summarize(episodes: &[crate::arena::EpisodeSummary]) -> (f64, f64, f64, f64, f64, f64) {
    let n = episodes.len();
    if n == 0 {
        return (0.0, 0.0, 0.0, f64::NAN, 0.0, 0.0);
    }
    let caught = episodes.iter().filter(|e| e.caught).count();
    let returned = episodes.iter().filter(|e| e.returned).count();
    let errors: Vec<f64> = episodes.iter().filter_map(|e| e.landing_error).collect();
    let target_error = if errors.is_empty() { f64::NAN } else { errors.iter().sum::<f64>() / errors.len() as f64 };
    let rac = if caught == 0 { 0.0 } else { returned as f64 / caught as f64 };
    let ep_reward = episodes.iter().map(|e| e.total_reward).sum::<f64>() / n as f64;
    let fallback = episodes.iter().filter(|e| e.random_fallback).count() as f64 / n as f64;
    (caught as f64 / n as f64, returned as f64 / n as f64, rac, target_error, ep_reward, fallback)
}

/// Observation moments of a batch, computed over fixed-size chunks and
/// merged in order.
fn batch_moments(raw_obs: &[f64], exec: Exec) -> RunningMoments {
    const CHUNK: usize = 256 * OBS_DIM;
    exec.map_chunks(raw_obs, CHUNK, |c| RunningMoments::from_batch(OBS_DIM, c.chunks_exact(OBS_DIM)))
        .iter()
        .fold(RunningMoments::new(OBS_DIM), |acc, m| acc.merge(m))
}

/// Runs the three-stage schedule. When `out` is given, writes
/// `metrics.csv`, `latest.bin` after every epoch, `stage{1,2,3}.bin` at each
/// stage end and `final.bin`. `progress` is called after every epoch.
pub fn run_curriculum(
    cfg: &TrainConfig,
    arena: Arc<ArenaConfig>,
    seed: u64,
    config_hash: [u8; 32],
    out: Option<&Path>,
    mut progress: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, LearnerError> {
    cfg.validate().map_err(LearnerError::Config)?;
    arena.validate().map_err(LearnerError::Config)?;
    let mut learner_rng = crate::seedgen::stream_rng(seed, u64::MAX);
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut policy = Policy::new(default_arch(cfg.hidden_width, cfg.hidden_depth), cfg.init_log_std, &mut init_rng);
    let mut adam = Adam::new(policy.net.len(), cfg.ppo.adam_eps);

    let buffer = SeedBuffer::new(cfg.train_envs);
    let mut pool = GeneratorPool::new(cfg.generator_envs, seed);
    let rollout = RolloutSettings {
        geometry: arena.geometry,
        ball: arena.ball,
        flight: arena.flight,
        dt: arena.physics_dt(),
        ..RolloutSettings::default()
    };
    let ranges: SeedRanges = arena.fallback_ranges;
    let mut venv = VecEnv::new(Arc::clone(&arena), cfg.train_envs, seed);
    let mut generator = GeneratorStats::default();

    let mut writer = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(csv::Writer::from_path(dir.join("metrics.csv"))?)
        }
        None => None,
    };
    let save = |policy: &Policy, stage: StageIndex, epoch: usize, name: &str| -> Result<(), LearnerError> {
        if let Some(dir) = out {
            let ck = Checkpoint { config_hash, stage: stage.get(), epoch: epoch as u64, policy: policy.clone() };
            ck.save(&dir.join(name))?;
        }
        Ok(())
    };

    let mut metrics = Vec::new();
    let mut started = false;
    for stage in StageIndex::ALL {
        venv.set_stage(stage);
        policy.moments.reset_count();
        for e in 0..cfg.epochs[stage.column()] {
            let round = pool.fill(cfg.exec, &buffer, &ranges, &rollout, cfg.generator_tries);
            generator.absorb(&round);
            if !started {
                venv.reset_all(&buffer);
                started = true;
            }
            let mut c = collect(&policy, &mut venv, &buffer, cfg, &mut learner_rng)?;
            policy.moments = policy.moments.merge(&batch_moments(&c.raw_obs, cfg.exec));
            c.data.normalize_advantages();
            let lr = cfg.learning_rate(stage, e);
            let stats = ppo_update(&mut policy.net, &mut adam, &c.data, &cfg.ppo, lr, cfg.exec, &mut learner_rng)?;

            let (catch_rate, return_rate, return_after_catch, target_error, mean_episode_reward, fallback_rate) = summarize(&c.episodes);
            let m = EpochMetrics {
                epoch: metrics.len(),
                stage: stage.get(),
                mean_reward: c.reward_sum / c.data.len() as f64,
                episodes: c.episodes.len(),
                catch_rate,
                return_rate,
                return_after_catch,
                target_error,
                mean_episode_reward,
                policy_loss: stats.policy_loss,
                value_loss: stats.value_loss,
                entropy: stats.entropy,
                kl: stats.kl,
                clip_fraction: stats.clip_fraction,
                learning_rate: lr,
                fallback_rate,
                generator_valid_rate: round.valid_rate(),
            };
            if let Some(w) = writer.as_mut() {
                w.serialize(m)?;
                w.flush()?;
            }
            save(&policy, stage, m.epoch, "latest.bin")?;
            progress(&m);
            metrics.push(m);
        }
        save(&policy, stage, metrics.len(), &format!("stage{}.bin", stage.get()))?;
    }
    if let Some(mut w) = writer {
        if metrics.is_empty() {
            // Keep the header so an empty run still yields a readable file.
            w.write_record(METRICS_HEADER)?;
        }
        w.flush()?;
    }
    save(&policy, StageIndex::TARGET, metrics.len(), "final.bin")?;
    Ok(TrainOutcome { policy, metrics, generator })
}

pub const METRICS_HEADER: [&str; 17] = [
    "epoch",
    "stage",
    "mean_reward",
    "episodes",
    "catch_rate",
    "return_rate",
    "return_after_catch",
    "target_error",
    "mean_episode_reward",
    "policy_loss",
    "value_loss",
    "entropy",
    "kl",
    "clip_fraction",
    "learning_rate",
    "fallback_rate",
    "generator_valid_rate",
];

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>, LearnerError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<EpochMetrics>, _>>()?)
}
