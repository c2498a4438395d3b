//! `flamekit train` — optimize one diffusion model (pose or expression) on
//! a corpus directory and write a checkpoint plus the loss curve.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use flamekit::diffusion::{save_checkpoint, train, Channel, Dataset, TrainConfig};

use crate::commands::ensure_dir;
use crate::config::pick;
use crate::Shared;

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    shared: Shared,
    /// Which model to train: pose or expr.
    #[arg(long)]
    channel: Channel,
    /// Corpus directory (index.json plus fseq files).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda_vel: Option<f64>,
    #[arg(long)]
    max_frames: Option<usize>,
    #[arg(long)]
    cfg_drop_prob: Option<f64>,
    #[arg(long)]
    diffusion_steps: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    ff_dim: Option<usize>,
    #[arg(long)]
    smooth_window: Option<usize>,
    /// Evaluate per-sample gradients on the thread pool.
    #[arg(long)]
    parallel: Option<bool>,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let cfg = args.shared.file_config()?;
    let seed = args.shared.seed_or(&cfg);
    let out = args.shared.out_or(&cfg, "out");
    ensure_dir(&out)?;

    let data = Dataset::load_dir(&args.data)
        .with_context(|| format!("loading dataset {}", args.data.display()))?;
    let channel = data.channel()?;
    anyhow::ensure!(
        channel == args.channel,
        "dataset holds {:?} sequences but --channel {:?} was requested",
        channel,
        args.channel
    );

    let defaults = TrainConfig::default();
    let t = &cfg.train;
    let train_cfg = TrainConfig {
        steps: pick(args.steps, t.steps, defaults.steps),
        batch: pick(args.batch, t.batch, defaults.batch),
        lr: pick(args.lr, t.lr, defaults.lr),
        lambda_vel: pick(args.lambda_vel, t.lambda_vel, defaults.lambda_vel),
        max_frames: pick(args.max_frames, t.max_frames, defaults.max_frames),
        cfg_drop_prob: pick(args.cfg_drop_prob, t.cfg_drop_prob, defaults.cfg_drop_prob),
        seed,
        diffusion_steps: pick(args.diffusion_steps, t.diffusion_steps, defaults.diffusion_steps),
        layers: pick(args.layers, t.layers, defaults.layers),
        latent_dim: pick(args.latent_dim, t.latent_dim, defaults.latent_dim),
        ff_dim: pick(args.ff_dim, t.ff_dim, defaults.ff_dim),
        smooth_window: pick(args.smooth_window, t.smooth_window, defaults.smooth_window),
        normalize: t.normalize.unwrap_or(defaults.normalize),
        parallel: pick(args.parallel, t.parallel, defaults.parallel),
        parameterization: defaults.parameterization,
    };

    let (net, record) = train(&data, &train_cfg)?;

    let ckpt = out.join(format!("dm_{}.dmck", args.channel.name()));
    save_checkpoint(&net, &ckpt, false)?;
    let curve_path = out.join(format!("dm_{}_loss.json", args.channel.name()));
    let curve = serde_json::json!({
        "loss": record.loss,
        "simple": record.simple,
        "velocity": record.velocity,
    });
    std::fs::write(&curve_path, serde_json::to_vec_pretty(&curve)?)
        .with_context(|| format!("writing {}", curve_path.display()))?;

    crate::summary(serde_json::json!({
        "status": "ok",
        "command": "train",
        "channel": args.channel.name(),
        "checkpoint": ckpt,
        "loss_curve": curve_path,
        "steps": train_cfg.steps,
        "params": net.param_count(),
        "final_loss": record.loss.last(),
        "seed": seed,
    }));
    Ok(())
}
