//! Shared reader/writer for the "JSON manifest + little-endian f32 blob"
//! container used by the model (`fkm-v1`) and checkpoint (`dmck-v1`) files.
//! The blob either follows the manifest in the same file (separated by one
//! newline) or lives in a sidecar file named by the manifest.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub(crate) struct ArrayDesc {
    pub name: String,
    /// Byte offset from the start of the blob.
    pub offset: usize,
    /// Element count (f32 values).
    pub len: usize,
}

pub(crate) fn pack_arrays(arrays: &[(&str, &[f64])]) -> (Vec<ArrayDesc>, Vec<u8>) {
    let mut descs = Vec::with_capacity(arrays.len());
    let mut blob = Vec::new();
    for (name, vals) in arrays {
        descs.push(ArrayDesc {
            name: (*name).to_string(),
            offset: blob.len(),
            len: vals.len(),
        });
        for v in *vals {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    (descs, blob)
}

pub(crate) fn unpack_array(blob: &[u8], desc: &ArrayDesc, path: &Path) -> Result<Vec<f64>> {
    let end = desc.offset + 4 * desc.len;
    if end > blob.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!(
                "array {:?} spans {}..{} but blob has {} bytes",
                desc.name,
                desc.offset,
                end,
                blob.len()
            ),
        });
    }
    Ok(blob[desc.offset..end]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect())
}

/// Write a manifest, appending the blob inline or into `<sidecar>` when
/// given. The manifest itself must carry the sidecar name so readers can
/// find it.
pub(crate) fn write_container<M: Serialize>(
    path: &Path,
    manifest: &M,
    blob: &[u8],
    sidecar: Option<&str>,
) -> Result<()> {
    let mut bytes = serde_json::to_vec(manifest).map_err(|e| Error::json(path, e))?;
    match sidecar {
        Some(name) => {
            let dir = path.parent().unwrap_or_else(|| Path::new("."));
            fs::write(dir.join(name), blob).map_err(|e| Error::io(dir.join(name), e))?;
            bytes.push(b'\n');
            fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        }
        None => {
            bytes.push(b'\n');
            bytes.extend_from_slice(blob);
            fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

/// Read a manifest and its blob; `sidecar_of` extracts the optional sidecar
/// file name from the parsed manifest.
pub(crate) fn read_container<M: DeserializeOwned>(
    path: &Path,
    sidecar_of: impl Fn(&M) -> Option<String>,
) -> Result<(M, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut stream = serde_json::Deserializer::from_slice(&bytes).into_iter::<M>();
    let manifest = match stream.next() {
        Some(Ok(m)) => m,
        Some(Err(e)) => return Err(Error::json(path, e)),
        None => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "empty file".into(),
            })
        }
    };
    let offset = stream.byte_offset();
    let blob = match sidecar_of(&manifest) {
        Some(name) => {
            let dir = path.parent().unwrap_or_else(|| Path::new("."));
            fs::read(dir.join(&name)).map_err(|e| Error::io(dir.join(&name), e))?
        }
        None => {
            let mut rest = &bytes[offset..];
            if rest.first() == Some(&b'\n') {
                rest = &rest[1..];
            }
            rest.to_vec()
        }
    };
    Ok((manifest, blob))
}
