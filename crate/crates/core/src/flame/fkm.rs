//! The `fkm-v1` model container: a JSON manifest (topology, dimensions,
//! offset table) followed by the six little-endian float32 arrays in the
//! fixed order template, shape_basis, pose_basis, expr_basis,
//! joint_regressor, skin_weights, each row-major. The blob is appended to
//! the manifest by default or written to a sidecar file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FlameModel, ROOT_SENTINEL};
use crate::blobio::{pack_arrays, read_container, unpack_array, write_container, ArrayDesc};
use crate::error::{Error, Result};

pub const FKM_VERSION: &str = "fkm-v1";

#[derive(Serialize, Deserialize)]
struct FkmManifest {
    version: String,
    n_vertices: usize,
    n_joints: usize,
    dims: FkmDims,
    /// Parent joint per joint; -1 marks the root.
    kintree: Vec<i64>,
    faces: Vec<[u32; 3]>,
    arrays: Vec<ArrayDesc>,
    /// Sidecar blob file name; when absent the blob follows the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    blob: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct FkmDims {
    shape: usize,
    expr: usize,
}

const ARRAY_ORDER: [&str; 6] = [
    "template",
    "shape_basis",
    "pose_basis",
    "expr_basis",
    "joint_regressor",
    "skin_weights",
];

/// Write a model; `sidecar_blob = true` stores the float data next to the
/// manifest in `<stem>.bin` instead of appending it.
pub fn save_fkm(model: &FlameModel, path: impl AsRef<Path>, sidecar_blob: bool) -> Result<()> {
    let path = path.as_ref();
    let arrays = model.arrays();
    let (descs, blob) = pack_arrays(&arrays);
    let sidecar = if sidecar_blob {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        Some(format!("{stem}.bin"))
    } else {
        None
    };
    let manifest = FkmManifest {
        version: FKM_VERSION.to_string(),
        n_vertices: model.n_vertices(),
        n_joints: model.n_joints(),
        dims: FkmDims {
            shape: model.shape_dim(),
            expr: model.expr_dim(),
        },
        kintree: model
            .kintree()
            .iter()
            .map(|&p| if p == ROOT_SENTINEL { -1 } else { p as i64 })
            .collect(),
        faces: model.faces().to_vec(),
        arrays: descs,
        blob: sidecar.clone(),
    };
    write_container(path, &manifest, &blob, sidecar.as_deref())
}

pub fn load_fkm(path: impl AsRef<Path>) -> Result<FlameModel> {
    let path = path.as_ref();
    let (manifest, blob): (FkmManifest, Vec<u8>) = read_container(path, |m: &FkmManifest| m.blob.clone())?;
    if manifest.version != FKM_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("unsupported version {:?}", manifest.version),
        });
    }
    let mut arrays = Vec::with_capacity(ARRAY_ORDER.len());
    for name in ARRAY_ORDER {
        let desc = manifest
            .arrays
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                reason: format!("missing array {name:?}"),
            })?;
        arrays.push(unpack_array(&blob, desc, path)?);
    }
    let kintree: Vec<u32> = manifest
        .kintree
        .iter()
        .map(|&p| if p < 0 { ROOT_SENTINEL } else { p as u32 })
        .collect();
    let mut it = arrays.into_iter();
    FlameModel::new(
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        manifest.faces,
        kintree,
        manifest.n_vertices,
        manifest.n_joints,
        manifest.dims.shape,
        manifest.dims.expr,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flame::mini_flame;

    #[test]
    fn fkm_roundtrip_inline_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let model = mini_flame();
        for sidecar in [false, true] {
            let path = dir.path().join(if sidecar { "m_side.fkm" } else { "m_inline.fkm" });
            save_fkm(&model, &path, sidecar).unwrap();
            let loaded = load_fkm(&path).unwrap();
            assert_eq!(loaded.n_vertices(), model.n_vertices());
            assert_eq!(loaded.faces(), model.faces());
            assert_eq!(loaded.kintree(), model.kintree());
            // Storage is f32, so expect f32-level agreement.
            for ((_, a), (_, b)) in loaded.arrays().iter().zip(model.arrays().iter()) {
                assert_eq!(a.len(), b.len());
                for (x, y) in a.iter().zip(b.iter()) {
                    assert!((x - y).abs() <= (y.abs() + 1.0) * 1e-6);
                }
            }
        }
    }

    #[test]
    fn fkm_rejects_bad_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fkm");
        std::fs::write(&path, b"{\"version\":\"fkm-v0\"}").unwrap();
        assert!(load_fkm(&path).is_err());
    }
}
