//! The `dmck-v1` checkpoint container: a JSON manifest (architecture config,
//! normalization stats, offset table) plus the flat parameter vector as a
//! little-endian float32 blob, appended or in a sidecar file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{DenoiserConfig, DenoiserNet, Normalization};
use crate::blobio::{pack_arrays, read_container, unpack_array, write_container, ArrayDesc};
use crate::error::{Error, Result};

pub const DMCK_VERSION: &str = "dmck-v1";

#[derive(Serialize, Deserialize)]
struct DmckManifest {
    version: String,
    config: DenoiserConfig,
    norm: Normalization,
    param_count: usize,
    arrays: Vec<ArrayDesc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    blob: Option<String>,
}

pub fn save_checkpoint(net: &DenoiserNet, path: impl AsRef<Path>, sidecar_blob: bool) -> Result<()> {
    let path = path.as_ref();
    let (descs, blob) = pack_arrays(&[("params", net.params())]);
    let sidecar = if sidecar_blob {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "checkpoint".into());
        Some(format!("{stem}.bin"))
    } else {
        None
    };
    let manifest = DmckManifest {
        version: DMCK_VERSION.to_string(),
        config: net.config().clone(),
        norm: net.norm().clone(),
        param_count: net.param_count(),
        arrays: descs,
        blob: sidecar.clone(),
    };
    write_container(path, &manifest, &blob, sidecar.as_deref())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DenoiserNet> {
    let path = path.as_ref();
    let (manifest, blob): (DmckManifest, Vec<u8>) = read_container(path, |m: &DmckManifest| m.blob.clone())?;
    if manifest.version != DMCK_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("unsupported version {:?}", manifest.version),
        });
    }
    let desc = manifest
        .arrays
        .iter()
        .find(|d| d.name == "params")
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            reason: "missing params array".into(),
        })?;
    let params = unpack_array(&blob, desc, path)?;
    if params.len() != manifest.param_count {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!(
                "param blob holds {} values, manifest says {}",
                params.len(),
                manifest.param_count
            ),
        });
    }
    DenoiserNet::from_parts(manifest.config, params, manifest.norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{Cond, Parameterization};
    use crate::tensor::Tensor;

    #[test]
    fn checkpoint_roundtrip_preserves_behavior_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DenoiserConfig {
            feature_dim: 4,
            latent_dim: 8,
            layers: 1,
            ff_dim: 16,
            vocab: vec!["x".into()],
            parameterization: Parameterization::X0,
            channel: None,
            fps: 25.0,
        };
        let net = DenoiserNet::new(cfg, 9).unwrap();
        let path = dir.path().join("net.dmck");
        save_checkpoint(&net, &path, false).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config(), net.config());
        assert_eq!(loaded.param_count(), net.param_count());

        let x = Tensor::filled([3, 4], 0.25);
        let a = net.predict(&x, 2, Cond::Null);
        let b = loaded.predict(&x, 2, Cond::Null);
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-5, "{u} vs {v}");
        }
    }

    #[test]
    fn sidecar_checkpoint_loads() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DenoiserConfig::new(2, vec![]);
        let net = DenoiserNet::new(cfg, 1).unwrap();
        let path = dir.path().join("side.dmck");
        save_checkpoint(&net, &path, true).unwrap();
        assert!(dir.path().join("side.bin").exists());
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.param_count(), net.param_count());
    }
}
