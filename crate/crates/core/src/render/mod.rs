//! Deterministic software rasterizer for FLAME meshes: orbiting camera
//! (yaw/pitch/roll around the head center), z-buffered triangle fill with a
//! top-left tie-break rule, flat Lambertian shading from a fixed headlight,
//! and sprite-sheet PNG output (views as rows, time as columns).

mod camera;
mod raster;
mod sprite;

pub use camera::{project_point, CameraPose, Projection};
pub use raster::{mesh_centroid, render_mesh, render_mesh_at, rotate_mesh_about, RenderFrame};
pub use sprite::{sprite_sheet_image, write_sprite_sheet};

use rayon::prelude::*;

use crate::diffusion::{Channel, FlameSequence};
use crate::error::{Error, Result};
use crate::flame::{pose_vec_to_flame, FlameModel, FlameParams};

/// Per-frame parameters assembled from optional pose/expression channels and
/// a fixed shape vector.
pub fn params_from_channels(
    model: &FlameModel,
    shape: Option<&[f64]>,
    pose: Option<&FlameSequence>,
    expr: Option<&FlameSequence>,
    frame: usize,
) -> Result<FlameParams> {
    let mut params = FlameParams::zeros(model);
    if let Some(shape) = shape {
        if shape.len() != model.shape_dim() {
            return Err(Error::dim(
                "render shape params",
                model.shape_dim().to_string(),
                shape.len().to_string(),
            ));
        }
        params.shape.copy_from_slice(shape);
    }
    if let Some(pose_seq) = pose {
        if pose_seq.channel() != Channel::Pose {
            return Err(Error::InvalidArgument("pose sequence has wrong channel".into()));
        }
        let row = pose_seq.frame(frame.min(pose_seq.len() - 1));
        params.pose = pose_vec_to_flame(row, model.n_joints())?;
    }
    if let Some(expr_seq) = expr {
        if expr_seq.channel() != Channel::Expr {
            return Err(Error::InvalidArgument("expr sequence has wrong channel".into()));
        }
        let row = expr_seq.frame(frame.min(expr_seq.len() - 1));
        // The generation stage works in a fixed 50-dim expression space;
        // models expose their own dimension, so copy the overlap.
        let k = row.len().min(model.expr_dim());
        params.expr[..k].copy_from_slice(&row[..k]);
    }
    Ok(params)
}

/// Render an explicit parameter track from several viewpoints. The camera
/// orbits the rest-template centroid so the head stays put across frames.
/// Frames are evaluated in parallel; every frame is a pure function of its
/// inputs, so the grid is identical to sequential evaluation.
pub fn render_params_sequence(
    model: &FlameModel,
    params: &[FlameParams],
    cams: &[CameraPose],
    width: usize,
    height: usize,
) -> Result<Vec<Vec<RenderFrame>>> {
    if params.is_empty() || cams.is_empty() {
        return Err(Error::InvalidArgument(
            "render needs at least one frame and one view".into(),
        ));
    }
    let template_mesh = crate::flame::Mesh {
        vertices: model.template().to_vec(),
        faces: model.faces().to_vec(),
    };
    let center = mesh_centroid(&template_mesh);
    let meshes: Vec<_> = params
        .par_iter()
        .map(|p| model.forward(p))
        .collect::<Result<_>>()?;
    cams.par_iter()
        .map(|cam| {
            meshes
                .iter()
                .map(|mesh| render_mesh_at(mesh, cam, center, width, height))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Render a single-channel sequence (pose drives the skeleton, expression
/// drives the blend shapes; the other channel stays at rest).
pub fn render_sequence(
    model: &FlameModel,
    seq: &FlameSequence,
    cams: &[CameraPose],
    width: usize,
    height: usize,
) -> Result<Vec<Vec<RenderFrame>>> {
    let (pose, expr) = match seq.channel() {
        Channel::Pose => (Some(seq), None),
        Channel::Expr => (None, Some(seq)),
    };
    let params: Vec<FlameParams> = (0..seq.len())
        .map(|i| params_from_channels(model, None, pose, expr, i))
        .collect::<Result<_>>()?;
    render_params_sequence(model, &params, cams, width, height)
}
