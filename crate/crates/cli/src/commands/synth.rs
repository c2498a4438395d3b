//! `flamekit synth` — deterministic synthetic corpus generation.

use anyhow::{Context, Result};
use clap::Args;
use flamekit::corpus::{builtin_patterns, pattern_by_label, synth_dataset};
use flamekit::diffusion::Channel;

use crate::config::pick;
use crate::Shared;

#[derive(Args)]
pub struct SynthArgs {
    #[command(flatten)]
    shared: Shared,
    /// Comma-separated labels; defaults to every built-in pattern.
    #[arg(long)]
    labels: Option<String>,
    /// Keep only patterns of one channel (pose|expr).
    #[arg(long)]
    channel: Option<Channel>,
    #[arg(long)]
    n_per_label: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    fps: Option<f64>,
}

pub fn run(args: SynthArgs) -> Result<()> {
    let cfg = args.shared.file_config()?;
    let seed = args.shared.seed_or(&cfg);
    let out = args.shared.out_or(&cfg, "dataset");

    let patterns = match args.labels.or_else(|| cfg.synth.labels.as_ref().map(|v| v.join(","))) {
        Some(csv) => csv
            .split(',')
            .map(|l| pattern_by_label(l.trim()))
            .collect::<flamekit::Result<Vec<_>>>()?,
        None => builtin_patterns(),
    };
    let patterns: Vec<_> = match args.channel {
        Some(ch) => patterns.into_iter().filter(|p| p.channel == ch).collect(),
        None => patterns,
    };
    anyhow::ensure!(!patterns.is_empty(), "no patterns selected");

    let n_per_label = pick(args.n_per_label, cfg.synth.n_per_label, 200);
    let frames = pick(args.frames, cfg.synth.frames, 30);
    let fps = pick(args.fps, cfg.synth.fps, 30.0);

    let data = synth_dataset(&patterns, n_per_label, frames, fps, seed)?;
    data.save_dir(&out)
        .with_context(|| format!("writing dataset to {}", out.display()))?;

    crate::summary(serde_json::json!({
        "status": "ok",
        "command": "synth",
        "out": out,
        "sequences": data.len(),
        "labels": patterns.iter().map(|p| p.label.clone()).collect::<Vec<_>>(),
        "frames": frames,
        "seed": seed,
    }));
    Ok(())
}
