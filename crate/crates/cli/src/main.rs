use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spinrally_cli::{cmd_eval, cmd_gen_seeds, cmd_replay, cmd_report, cmd_train, CliError, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "spinrally", version, about = "Spinning-ball table-tennis rally simulator and curriculum trainer")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the three-stage curriculum.
    Train {
        /// Print a progress line every N epochs.
        #[arg(long, default_value_t = 10)]
        log_every: usize,
    },
    /// Generate validated rally seeds into seeds.csv.
    GenSeeds {
        #[arg(long)]
        count: usize,
    },
    /// Evaluate a checkpoint with deterministic actions.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to eval.episodes from the config.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Replay recorded ball trajectories against a checkpoint.
    Replay {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        recordings: PathBuf,
    },
    /// Plot learning curves from a metrics CSV.
    Report {
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(CliError::Config)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    let out = cfg.out.clone();
    match cli.command {
        Command::Train { log_every } => {
            let every = log_every.max(1);
            let outcome = cmd_train(&cfg, &out, |m| {
                if (m.epoch + 1) % every == 0 {
                    eprintln!(
                        "epoch {:5} stage {} reward {:8.4} catch {:.3} return {:.3} entropy {:.3}",
                        m.epoch, m.stage, m.mean_reward, m.catch_rate, m.return_rate, m.entropy
                    );
                }
            })?;
            println!("trained {} epochs; outputs in {}", outcome.metrics.len(), out.display());
        }
        Command::GenSeeds { count } => {
            let seeds = cmd_gen_seeds(&cfg, count, &out)?;
            println!("wrote {} seeds to {}", seeds.len(), out.join("seeds.csv").display());
        }
        Command::Eval { checkpoint, episodes } => {
            let report = cmd_eval(&cfg, &checkpoint, episodes.unwrap_or(cfg.eval.episodes), &out)?;
            print!("{}", report.to_text());
        }
        Command::Replay { checkpoint, recordings } => {
            let summary = cmd_replay(&cfg, &checkpoint, &recordings, &out)?;
            print!("{}", std::fs::read_to_string(out.join("replay.txt")).unwrap_or_default());
            if summary.recordings.is_empty() {
                eprintln!("no recordings found in {}", recordings.display());
            }
        }
        Command::Report { metrics } => {
            let files = cmd_report(&metrics, &out)?;
            println!("wrote {} and {}", files.svg.display(), files.table.display());
        }
        Command::ShowConfig => {
            cfg.validate().map_err(CliError::Config)?;
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
