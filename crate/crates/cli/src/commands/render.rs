//! `flamekit render` — turn pose/expression sequences into a multi-view
//! sprite sheet (views as rows, time as columns). The identity shape can be
//! supplied as data via `--shape`, mirroring a reference-image shape
//! estimate arriving from upstream.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use flamekit::diffusion::FlameSequence;
use flamekit::render::{
    params_from_channels, render_params_sequence, write_sprite_sheet, CameraPose, Projection,
};

use crate::commands::{ensure_dir, load_model};
use crate::config::{default_views, parse_size, parse_views, pick};
use crate::Shared;

#[derive(Args)]
pub struct RenderArgs {
    #[command(flatten)]
    shared: Shared,
    /// "mini" or a path to an fkm model asset.
    #[arg(long, default_value = "mini")]
    model: String,
    /// Pose-channel fseq file driving head and jaw.
    #[arg(long)]
    pose: Option<PathBuf>,
    /// Expression-channel fseq file.
    #[arg(long)]
    expr: Option<PathBuf>,
    /// JSON file {"shape": [...]} with identity shape coefficients.
    #[arg(long)]
    shape: Option<PathBuf>,
    /// Views as "yaw,pitch,roll;..." in degrees.
    #[arg(long)]
    views: Option<String>,
    /// Frame size WxH.
    #[arg(long)]
    size: Option<String>,
    /// Vertical field of view in degrees.
    #[arg(long)]
    fov_deg: Option<f64>,
    /// Camera distance in meters.
    #[arg(long)]
    distance: Option<f64>,
    /// Cap the number of rendered frames.
    #[arg(long)]
    max_frames: Option<usize>,
    /// Output file name within the output directory.
    #[arg(long, default_value = "sprite.png")]
    name: String,
}

#[derive(serde::Deserialize)]
struct ShapeFile {
    shape: Vec<f64>,
}

pub fn run(args: RenderArgs) -> Result<()> {
    let cfg = args.shared.file_config()?;
    let out = args.shared.out_or(&cfg, "out");
    ensure_dir(&out)?;

    let model_spec = args.model.clone();
    let model = if args.model == "mini" {
        match &cfg.model {
            Some(spec) => load_model(spec)?,
            None => load_model("mini")?,
        }
    } else {
        load_model(&model_spec)?
    };

    let pose = args
        .pose
        .as_ref()
        .map(|p| FlameSequence::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let expr = args
        .expr
        .as_ref()
        .map(|p| FlameSequence::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    anyhow::ensure!(
        pose.is_some() || expr.is_some(),
        "at least one of --pose / --expr is required"
    );
    let shape = args
        .shape
        .as_ref()
        .map(|p| -> Result<Vec<f64>> {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            let f: ShapeFile = serde_json::from_slice(&bytes)
                .with_context(|| format!("parsing {}", p.display()))?;
            Ok(f.shape)
        })
        .transpose()?;

    let view_angles = match &args.views {
        Some(s) => parse_views(s)?,
        None => cfg.render.views.clone().unwrap_or_else(default_views),
    };
    let size = match &args.size {
        Some(s) => parse_size(s)?,
        None => cfg.render.size.unwrap_or([512, 512]),
    };
    let fov = pick(args.fov_deg, cfg.render.fov_deg, 45.0).to_radians();
    let distance = pick(args.distance, cfg.render.distance, 0.4);

    let cams: Vec<CameraPose> = view_angles
        .iter()
        .map(|&[y, p, r]| CameraPose {
            yaw: y.to_radians(),
            pitch: p.to_radians(),
            roll: r.to_radians(),
            distance,
            fov_y: fov,
            projection: Projection::Perspective,
        })
        .collect();

    let n_frames = pose
        .as_ref()
        .map(|s| s.len())
        .into_iter()
        .chain(expr.as_ref().map(|s| s.len()))
        .max()
        .unwrap_or(1);
    let n_frames = args.max_frames.map_or(n_frames, |m| n_frames.min(m));
    anyhow::ensure!(n_frames > 0, "no frames to render");

    let params = (0..n_frames)
        .map(|i| params_from_channels(&model, shape.as_deref(), pose.as_ref(), expr.as_ref(), i))
        .collect::<flamekit::Result<Vec<_>>>()?;
    let grid = render_params_sequence(&model, &params, &cams, size[0], size[1])?;
    let path = out.join(&args.name);
    write_sprite_sheet(&grid, &path)?;

    crate::summary(serde_json::json!({
        "status": "ok",
        "command": "render",
        "out": path,
        "views": cams.len(),
        "frames": n_frames,
        "size": size,
    }));
    Ok(())
}
