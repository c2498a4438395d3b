//! Command-line pipeline: synthesize labeled parameter corpora, train the
//! pose/expression diffusion models, sample sequences from text, render
//! multi-view sprite sheets, compute metrics, and run the self-check suite.
//!
//! Every command prints one machine-readable JSON summary line on success.
//! Usage errors exit with code 2 (clap), runtime failures with code 1 and a
//! structured JSON message on stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "flamekit",
    version,
    about = "Parametric head sequences: synthesis, diffusion, rendering, metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub(crate) struct Shared {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for all randomized work.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

impl Shared {
    pub(crate) fn file_config(&self) -> anyhow::Result<config::FileConfig> {
        config::FileConfig::load(self.config.as_deref())
    }

    pub(crate) fn seed_or(&self, cfg: &config::FileConfig) -> u64 {
        config::pick(self.seed, cfg.seed, 0)
    }

    pub(crate) fn out_or(&self, cfg: &config::FileConfig, default: &str) -> PathBuf {
        config::pick(self.out.clone(), cfg.out.clone(), PathBuf::from(default))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic labeled corpus of pose/expression sequences.
    Synth(commands::synth::SynthArgs),
    /// Train a diffusion model on a corpus (--channel pose|expr).
    Train(commands::train::TrainArgs),
    /// Sample sequences from a trained checkpoint given a text condition.
    Sample(commands::sample::SampleArgs),
    /// Render a sequence as a multi-view sprite sheet.
    Render(commands::render::RenderArgs),
    /// Compute variability / parameter-L1 metrics for sequences.
    Metrics(commands::metrics::MetricsArgs),
    /// Run the oracle and invariant self-check suite.
    Check(commands::check::CheckArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Sample(args) => commands::sample::run(args),
        Command::Render(args) => commands::render::run(args),
        Command::Metrics(args) => commands::metrics::run(args),
        Command::Check(args) => commands::check::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let msg = serde_json::json!({
                "status": "error",
                "message": format!("{err:#}"),
            });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}

/// Print the single machine-readable completion line.
pub(crate) fn summary(value: serde_json::Value) {
    println!("{value}");
}
