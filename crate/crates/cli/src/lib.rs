//! Command implementations behind the `spinrally` binary.
//!
//! Every command takes a resolved [`RunConfig`] and an output directory and
//! reports failures as a [`CliError`], whose variant fixes the exit code.

pub mod config;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use serde::Serialize;
use spinrally::arena::ArenaConfig;
use spinrally::eval::{evaluate, EvalReport};
use spinrally::learner::{run_curriculum, Checkpoint, EpochMetrics, TrainOutcome};
use spinrally::real2sim::{load_recorded, process_recording, replay};
use spinrally::seedgen::{write_seeds_csv, GeneratorPool, RallySeed};

pub use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    status: &'a str,
    config_hash: String,
    config: &'a RunConfig,
}

/// Writes `manifest.json` with the exact effective configuration.
pub fn write_manifest(out: &Path, command: &str, status: &str, cfg: &RunConfig) -> anyhow::Result<()> {
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        status,
        config_hash: config::hex(&cfg.hash()),
        config: cfg,
    };
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&m)?).with_context(|| format!("writing {}", path.display()))
}

fn create_out(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display())).map_err(CliError::Runtime)
}

fn arena_of(cfg: &RunConfig) -> Arc<ArenaConfig> {
    Arc::new(cfg.resolved_arena())
}

/// Trains the full curriculum. The manifest reads `running` until training
/// finishes, then `complete` or `failed`.
pub fn cmd_train(cfg: &RunConfig, out: &Path, progress: impl FnMut(&EpochMetrics)) -> CliResult<TrainOutcome> {
    cfg.validate().map_err(CliError::Config)?;
    create_out(out)?;
    write_manifest(out, "train", "running", cfg)?;
    let result = run_curriculum(&cfg.train, arena_of(cfg), cfg.seed, cfg.hash(), Some(out), progress);
    write_manifest(out, "train", if result.is_ok() { "complete" } else { "failed" }, cfg)?;
    result.context("training failed").map_err(CliError::Runtime)
}

/// Rounds of the generator pool allowed before giving up on `count` seeds.
const MAX_GENERATOR_ROUNDS: usize = 100_000;

/// Runs generator rounds until `count` valid seeds exist and writes the
/// first `count` of them to `out/seeds.csv`.
pub fn cmd_gen_seeds(cfg: &RunConfig, count: usize, out: &Path) -> CliResult<Vec<RallySeed>> {
    cfg.validate().map_err(CliError::Config)?;
    create_out(out)?;
    let arena = cfg.resolved_arena();
    let settings = spinrally::eval::rollout_settings(&arena);
    let mut pool = GeneratorPool::new(cfg.train.generator_envs.max(1), cfg.seed);
    let mut seeds = Vec::with_capacity(count);
    let mut rounds = 0;
    while seeds.len() < count {
        if rounds == MAX_GENERATOR_ROUNDS {
            return Err(CliError::Runtime(anyhow::anyhow!("found only {} valid seeds in {rounds} rounds", seeds.len())));
        }
        let (found, _) = pool.round(cfg.train.exec, &arena.fallback_ranges, &settings, cfg.train.generator_tries.max(1));
        seeds.extend(found);
        rounds += 1;
    }
    seeds.truncate(count);
    let path = out.join("seeds.csv");
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_seeds_csv(file, &seeds).with_context(|| format!("writing {}", path.display()))?;
    Ok(seeds)
}

fn load_checkpoint(path: &Path, cfg: &RunConfig) -> CliResult<Checkpoint> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if ck.config_hash != cfg.hash() {
        eprintln!("note: checkpoint was trained under a different configuration");
    }
    Ok(ck)
}

fn write_report(out: &Path, stem: &str, json: &impl Serialize, text: &str) -> CliResult<()> {
    let write = |name: String, body: String| {
        let path = out.join(&name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
    };
    write(format!("{stem}.json"), serde_json::to_string_pretty(json).context("serializing report")?)?;
    write(format!("{stem}.txt"), text.to_string())?;
    Ok(())
}

/// Evaluates a checkpoint on `episodes` validated seeds with mean actions.
/// Writes `eval.json` and `eval.txt`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, episodes: usize, out: &Path) -> CliResult<EvalReport> {
    cfg.validate().map_err(CliError::Config)?;
    if episodes == 0 {
        return Err(CliError::Usage("--episodes must be positive".into()));
    }
    let ck = load_checkpoint(checkpoint, cfg)?;
    create_out(out)?;
    let report = evaluate(&ck.policy, &arena_of(cfg), episodes, cfg.seed, cfg.train.exec);
    write_report(out, "eval", &report, &report.to_text())?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct RecordingResult {
    pub file: String,
    pub error: Option<String>,
    pub events: Vec<String>,
    pub terminal: Option<String>,
    pub caught: bool,
    pub returned: bool,
    pub landing_error: Option<f64>,
    pub k_d: Option<f64>,
    pub k_m: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplaySummary {
    pub recordings: Vec<RecordingResult>,
    /// Over the recordings that replayed successfully.
    pub aggregate: EvalReport,
}

/// Replays every `*.csv` in `recordings` (sorted by name) against the
/// checkpoint. Recordings that fail processing or the inbound gate are
/// listed with their error and left out of the aggregate.
pub fn cmd_replay(cfg: &RunConfig, checkpoint: &Path, recordings: &Path, out: &Path) -> CliResult<ReplaySummary> {
    cfg.validate().map_err(CliError::Config)?;
    let ck = load_checkpoint(checkpoint, cfg)?;
    let mut files: Vec<PathBuf> = fs::read_dir(recordings)
        .with_context(|| format!("reading {}", recordings.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    create_out(out)?;
    let arena = arena_of(cfg);
    let mut results = Vec::new();
    let mut summaries = Vec::new();
    for (i, path) in files.iter().enumerate() {
        let file = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        let outcome = load_recorded(path)
            .and_then(|rows| process_recording(&rows, &cfg.real2sim, &arena))
            .and_then(|rec| replay(&rec, &arena, &ck.policy, cfg.seed, i as u64));
        results.push(match outcome {
            Ok(r) => {
                summaries.push(r.summary);
                RecordingResult {
                    file,
                    error: None,
                    events: r.events.iter().map(|e| e.kind.as_str().to_string()).collect(),
                    terminal: r.summary.terminal.map(|t| t.as_str().to_string()),
                    caught: r.summary.caught,
                    returned: r.summary.returned,
                    landing_error: r.summary.landing_error,
                    k_d: Some(r.fit.aero.k_d),
                    k_m: Some(r.fit.aero.k_m),
                }
            }
            Err(e) => RecordingResult {
                file,
                error: Some(e.to_string()),
                events: Vec::new(),
                terminal: None,
                caught: false,
                returned: false,
                landing_error: None,
                k_d: None,
                k_m: None,
            },
        });
    }
    let summary = ReplaySummary { recordings: results, aggregate: EvalReport::from_summaries(&summaries) };
    let mut text = String::new();
    for r in &summary.recordings {
        match &r.error {
            Some(e) => text.push_str(&format!("{}: skipped ({e})\n", r.file)),
            None => text.push_str(&format!("{}: {} [{}]\n", r.file, r.terminal.as_deref().unwrap_or("success"), r.events.join(" "))),
        }
    }
    text.push_str(&summary.aggregate.to_text());
    write_report(out, "replay", &summary, &text)?;
    Ok(summary)
}

/// Renders learning curves and a per-stage table from a metrics CSV.
pub fn cmd_report(metrics: &Path, out: &Path) -> CliResult<report::ReportFiles> {
    let rows = spinrally::learner::curriculum::read_metrics_csv(metrics).with_context(|| format!("reading {}", metrics.display()))?;
    create_out(out)?;
    Ok(report::render(&rows, out)?)
}
