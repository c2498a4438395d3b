//! `flamekit sample` — draw sequences from a trained checkpoint.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use flamekit::diffusion::{load_checkpoint, sample_batch, Cond, FlameSequence, NoiseSchedule};

use crate::commands::ensure_dir;
use crate::config::pick;
use crate::Shared;

#[derive(Args)]
pub struct SampleArgs {
    #[command(flatten)]
    shared: Shared,
    /// Checkpoint written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Condition text; empty string samples unconditionally.
    #[arg(long, default_value = "")]
    text: String,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    guidance: Option<f64>,
    /// Number of sequences to draw.
    #[arg(long)]
    count: Option<usize>,
    /// Diffusion sampling steps (defaults to the training step count).
    #[arg(long)]
    steps: Option<usize>,
}

pub fn run(args: SampleArgs) -> Result<()> {
    let cfg = args.shared.file_config()?;
    let seed = args.shared.seed_or(&cfg);
    let out = args.shared.out_or(&cfg, "out");
    ensure_dir(&out)?;

    let net = load_checkpoint(&args.ckpt)
        .with_context(|| format!("loading checkpoint {}", args.ckpt.display()))?;
    let frames = pick(args.frames, cfg.sample.frames, 30);
    let guidance = pick(args.guidance, cfg.sample.guidance, 2.5);
    let count = pick(args.count, cfg.sample.count, 1);
    let steps = args.steps.unwrap_or(1000);
    let sched = NoiseSchedule::cosine(steps);

    let tokens;
    let cond = if args.text.trim().is_empty() {
        Cond::Null
    } else {
        tokens = net.tokens_for(&args.text)?;
        Cond::Tokens(&tokens)
    };
    let channel = net
        .config()
        .channel
        .ok_or_else(|| anyhow::anyhow!("checkpoint carries no channel metadata"))?;

    let draws = sample_batch(&net, cond, count, frames, &sched, guidance, seed, true)?;
    let mut files = Vec::with_capacity(draws.len());
    for (i, t) in draws.iter().enumerate() {
        let raw = net.norm().invert(t);
        let seq = FlameSequence::from_tensor(channel, net.config().fps, &raw)?;
        let path = out.join(format!("sample_{i:03}.fseq.json"));
        seq.save(&path)?;
        files.push(path);
    }

    crate::summary(serde_json::json!({
        "status": "ok",
        "command": "sample",
        "channel": channel.name(),
        "text": args.text,
        "count": count,
        "frames": frames,
        "guidance": guidance,
        "files": files,
        "seed": seed,
    }));
    Ok(())
}
