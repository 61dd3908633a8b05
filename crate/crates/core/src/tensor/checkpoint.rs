//! Checkpoints: a JSON manifest of names, shapes and byte offsets next to one
//! flat file of little-endian `f64` values in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_DTYPE: &str = "f64-le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the binary file.
    pub offset: u64,
    /// Number of `f64` elements.
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub dtype: String,
    /// Binary file name, relative to the manifest's directory.
    pub binary: String,
    pub entries: Vec<CheckpointEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn binary_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `store` to `manifest_path` (JSON) and its sibling `.bin` file.
pub fn save_checkpoint(manifest_path: &Path, store: &ParamStore, meta: serde_json::Value) -> Result<()> {
    let bin = binary_path(manifest_path);
    let mut bytes = Vec::with_capacity(store.num_elements() * 8);
    let mut entries = Vec::with_capacity(store.len());
    for p in store.iter() {
        entries.push(CheckpointEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: bytes.len() as u64,
            count: p.value.numel() as u64,
        });
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        version: 1,
        dtype: CHECKPOINT_DTYPE.into(),
        binary: bin
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Invalid(format!("bad checkpoint path {}", manifest_path.display())))?
            .to_string(),
        entries,
        meta,
    };
    if let Some(dir) = manifest_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(&bin, bytes)?;
    fs::write(manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(manifest_path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    let fmt_err = |msg: String| Error::Format {
        path: manifest_path.to_path_buf(),
        msg,
    };
    if manifest.dtype != CHECKPOINT_DTYPE {
        return Err(fmt_err(format!("unsupported dtype {}", manifest.dtype)));
    }
    let bin_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.binary);
    let bytes = fs::read(&bin_path)?;
    let mut store = ParamStore::new();
    for e in &manifest.entries {
        let start = e.offset as usize;
        let end = start + e.count as usize * 8;
        if end > bytes.len() {
            return Err(fmt_err(format!("entry `{}` runs past end of {}", e.name, bin_path.display())));
        }
        let data: Vec<f64> = bytes[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&e.shape, data).map_err(|err| fmt_err(format!("entry `{}`: {err}", e.name)))?;
        store.add(e.name.clone(), t);
    }
    Ok((store, manifest.meta))
}
