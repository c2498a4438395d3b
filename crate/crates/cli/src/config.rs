//! Pipeline configuration: one JSON file plus per-flag overrides, flags win.
//! Every section is optional; command-line values take precedence over the
//! file, which takes precedence over built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// "mini" or a path to an fkm model file.
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub render: RenderSection,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub labels: Option<Vec<String>>,
    pub n_per_label: Option<usize>,
    pub frames: Option<usize>,
    pub fps: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub lambda_vel: Option<f64>,
    pub max_frames: Option<usize>,
    pub cfg_drop_prob: Option<f64>,
    pub diffusion_steps: Option<usize>,
    pub layers: Option<usize>,
    pub latent_dim: Option<usize>,
    pub ff_dim: Option<usize>,
    pub smooth_window: Option<usize>,
    pub normalize: Option<bool>,
    pub parallel: Option<bool>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub frames: Option<usize>,
    pub guidance: Option<f64>,
    pub count: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSection {
    /// Per view: yaw, pitch, roll in degrees.
    pub views: Option<Vec<[f64; 3]>>,
    /// width x height
    pub size: Option<[usize; 2]>,
    pub fov_deg: Option<f64>,
    pub distance: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let bytes = std::fs::read(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_slice(&bytes).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}

/// Flag > config > default.
pub fn pick<T: Clone>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

/// Parse a views flag like "-30,0,0;0,0,0;30,0,0;60,0,0" (degrees).
pub fn parse_views(s: &str) -> Result<Vec<[f64; 3]>> {
    let mut views = Vec::new();
    for (i, part) in s.split(';').enumerate() {
        let nums: Vec<f64> = part
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("view {i}: expected \"yaw,pitch,roll\" in degrees, got {part:?}"))?;
        anyhow::ensure!(nums.len() == 3, "view {i}: expected 3 angles, got {}", nums.len());
        views.push([nums[0], nums[1], nums[2]]);
    }
    anyhow::ensure!(!views.is_empty(), "no views given");
    Ok(views)
}

/// Parse a size flag like "512x512".
pub fn parse_size(s: &str) -> Result<[usize; 2]> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("expected WxH, got {s:?}"))?;
    Ok([
        w.trim().parse().with_context(|| format!("bad width in {s:?}"))?,
        h.trim().parse().with_context(|| format!("bad height in {s:?}"))?,
    ])
}

/// Default four-view turntable: yaws -30/0/30/60 degrees.
pub fn default_views() -> Vec<[f64; 3]> {
    vec![[-30.0, 0.0, 0.0], [0.0, 0.0, 0.0], [30.0, 0.0, 0.0], [60.0, 0.0, 0.0]]
}
