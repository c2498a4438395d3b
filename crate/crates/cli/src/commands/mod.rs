pub mod check;
pub mod metrics;
pub mod render;
pub mod sample;
pub mod synth;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};
use flamekit::flame::{load_fkm, mini_flame, FlameModel};

/// Resolve the model argument: the literal "mini" or a path to an fkm file.
pub fn load_model(spec: &str) -> Result<FlameModel> {
    if spec == "mini" {
        Ok(mini_flame())
    } else {
        load_fkm(Path::new(spec)).with_context(|| format!("loading model {spec:?}"))
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
