//! Policy evaluation and the rally success metrics.
//!
//! Rates over a set of episodes:
//!
//! * catch = episodes reaching racket contact / all episodes
//! * return = episodes reaching the opponent-court bounce / all episodes
//! * return-after-catch = returned / caught
//! * target error = mean landing error over returned episodes
//!
//! Evaluation episodes start from validated seeds, so "all episodes" is the
//! same as "all episodes with a valid inbound ball".

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::arena::{ArenaConfig, EpisodeSummary, RallyEnv};
use crate::exec::Exec;
use crate::learner::Policy;
use crate::reward::StageIndex;
use crate::seedgen::{rollout_candidate, sample_candidate, stream_rng, RallySeed, RolloutSettings, SeedRanges};

/// Histogram key for episodes that ended by reaching the opponent court.
pub const SUCCESS_KEY: &str = "success";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub catch_rate: f64,
    pub return_rate: f64,
    pub return_after_catch: f64,
    /// `None` when no episode was returned.
    pub mean_target_error: Option<f64>,
    pub terminal_histogram: BTreeMap<String, usize>,
}

impl EvalReport {
    pub fn from_summaries(eps: &[EpisodeSummary]) -> Self {
        let n = eps.len();
        let caught = eps.iter().filter(|e| e.caught).count();
        let returned = eps.iter().filter(|e| e.returned).count();
        let errors: Vec<f64> = eps.iter().filter(|e| e.returned).filter_map(|e| e.landing_error).collect();
        let mut hist = BTreeMap::new();
        for e in eps {
            let key = e.terminal.map_or(SUCCESS_KEY, |t| t.as_str());
            *hist.entry(key.to_string()).or_insert(0) += 1;
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            episodes: n,
            catch_rate: ratio(caught, n),
            return_rate: ratio(returned, n),
            return_after_catch: ratio(returned, caught),
            mean_target_error: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
            terminal_histogram: hist,
        }
    }

    /// Plain-text summary, one metric per line.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "episodes            {}\ncatch rate          {:.4}\nreturn rate         {:.4}\nreturn after catch  {:.4}\ntarget error (m)    {}\n",
            self.episodes,
            self.catch_rate,
            self.return_rate,
            self.return_after_catch,
            self.mean_target_error.map_or("n/a".to_string(), |e| format!("{e:.4}")),
        );
        for (k, v) in &self.terminal_histogram {
            s.push_str(&format!("  {k:<22}{v}\n"));
        }
        s
    }
}

/// Draws candidates from one RNG stream until `n` valid seeds are found.
pub fn validated_seeds(n: usize, ranges: &SeedRanges, settings: &RolloutSettings, seed: u64) -> Vec<RallySeed> {
    let mut rng = stream_rng(seed, u64::MAX - 1);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let c = sample_candidate(&mut rng, ranges);
        if rollout_candidate(&c, settings).valid {
            out.push(c);
        }
    }
    out
}

pub fn rollout_settings(arena: &ArenaConfig) -> RolloutSettings {
    RolloutSettings { geometry: arena.geometry, ball: arena.ball, flight: arena.flight, dt: arena.physics_dt(), ..RolloutSettings::default() }
}

/// Plays one deterministic (mean-action) episode per seed. Episode `i` uses
/// environment stream `i` of `env_seed`.
pub fn run_episodes(policy: &Policy, arena: &Arc<ArenaConfig>, seeds: &[RallySeed], stage: StageIndex, env_seed: u64, exec: Exec) -> Vec<EpisodeSummary> {
    exec.map_range(seeds.len(), |i| {
        let mut env = RallyEnv::new(Arc::clone(arena), env_seed, i as u64);
        env.set_stage(stage);
        let mut obs = env.reset(Some(seeds[i]));
        loop {
            let out = env.step(&policy.act_mean(&obs)).expect("policy actions are finite");
            if let Some(ep) = out.info.episode {
                return ep;
            }
            obs = out.observation;
        }
    })
}

/// Generates `episodes` validated seeds and evaluates `policy` on them.
pub fn evaluate(policy: &Policy, arena: &Arc<ArenaConfig>, episodes: usize, seed: u64, exec: Exec) -> EvalReport {
    let seeds = validated_seeds(episodes, &arena.fallback_ranges, &rollout_settings(arena), seed);
    EvalReport::from_summaries(&run_episodes(policy, arena, &seeds, StageIndex::TARGET, seed, exec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rally::TerminalReason;

    fn ep(caught: bool, returned: bool, err: Option<f64>, terminal: Option<TerminalReason>) -> EpisodeSummary {
        EpisodeSummary { caught, returned, landing_error: err, terminal, steps: 10, total_reward: 0.0, random_fallback: false }
    }

    #[test]
    fn rates() {
        let eps = [
            ep(true, true, Some(0.2), None),
            ep(true, true, Some(0.4), None),
            ep(true, false, None, Some(TerminalReason::ReturnIntoNet)),
            ep(false, false, None, Some(TerminalReason::MissedCatch)),
        ];
        let r = EvalReport::from_summaries(&eps);
        assert_eq!(r.catch_rate, 0.75);
        assert_eq!(r.return_rate, 0.5);
        assert!((r.return_after_catch - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.mean_target_error.unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(r.terminal_histogram[SUCCESS_KEY], 2);
        assert_eq!(r.terminal_histogram["missed_catch"], 1);
    }

    #[test]
    fn empty_report() {
        let r = EvalReport::from_summaries(&[]);
        assert_eq!((r.episodes, r.catch_rate, r.mean_target_error), (0, 0.0, None));
    }

    #[test]
    fn seeds_are_valid_and_reproducible() {
        let s = RolloutSettings::default();
        let a = validated_seeds(20, &SeedRanges::default(), &s, 4);
        assert_eq!(a, validated_seeds(20, &SeedRanges::default(), &s, 4));
        assert!(a.iter().all(|c| rollout_candidate(c, &s).valid));
    }
}
