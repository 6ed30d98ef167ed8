//! `kyle-marl` experiment driver.

mod commands;
mod config;
mod plot;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use kyle_marl::ResetMode;

use commands::Session;
use config::ExperimentConfig;
use run::RunDir;

#[derive(Parser)]
#[command(name = "kyle-marl", version, about = "Multi-agent extended Kyle market experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; omitted sections and fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the game and PPO seeds; the evaluation seed becomes seed + 1000.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; each config gets its own `<root>/<hash>/` directory.
    #[arg(long, env = "KYLE_MARL_RUNS", default_value = "runs")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Down,
    Up,
}

impl From<Mode> for ResetMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Down => ResetMode::EvalDown,
            Mode::Up => ResetMode::EvalUp,
        }
    }
}

#[derive(Args, Clone)]
struct EvalArgs {
    /// Evaluate one opening-price mode only (default: both).
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Evaluation episodes per mode (default: evaluation.episodes).
    #[arg(long)]
    episodes: Option<usize>,
    /// Checkpoint directory (default: the run's `checkpoints/`).
    #[arg(long)]
    checkpoints: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the recursive Kyle equilibrium for the game parameters.
    SolveKyle(Common),
    /// Optimal execution schedule under the equilibrium impact path.
    SolveExec(Common),
    /// Train all agents with independent PPO and save checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training episodes (default: ppo.total_episodes).
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Play evaluation episodes with frozen policies; write traces and a discovery report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Implementation shortfall of every execution strategy (full game only).
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Price-discovery diagnostics on trace CSVs (default: the run's eval traces).
    Diagnose {
        #[command(flatten)]
        common: Common,
        traces: Vec<PathBuf>,
    },
    /// SVG price and inventory figures from trace CSVs.
    Plot {
        #[command(flatten)]
        common: Common,
        traces: Vec<PathBuf>,
    },
}

fn session(common: &Common) -> Result<Session> {
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(Session {
        cfg: cfg.with_seed(common.seed),
        out_root: common.out.clone(),
        command_line: std::env::args().skip(1).collect::<Vec<_>>().join(" "),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SolveKyle(c) => commands::solve_kyle(&session(&c)?),
        Command::SolveExec(c) => commands::solve_exec(&session(&c)?),
        Command::Train { common, episodes } => commands::train(&session(&common)?, episodes),
        Command::Evaluate { common, eval } => commands::evaluate(
            &session(&common)?,
            eval.mode.map(Into::into),
            eval.episodes,
            eval.checkpoints.as_deref(),
        ),
        Command::Compare { common, eval } => commands::compare(
            &session(&common)?,
            eval.mode.map(Into::into),
            eval.episodes,
            eval.checkpoints.as_deref(),
        ),
        Command::Diagnose { common, traces } => commands::diagnose(&session(&common)?, &traces),
        Command::Plot { common, traces } => {
            // Without a config, figures go next to the given traces.
            let run = match (&common.config, traces.is_empty()) {
                (None, false) => None,
                _ => {
                    let s = session(&common)?;
                    Some(RunDir::path_for(&s.out_root, &s.cfg))
                }
            };
            commands::plot(run, &traces)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
