//! Model checkpoints: a JSON manifest next to a little-endian `f64` blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BpnnModel, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "bpnn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: Vec<ParamEntry>,
    /// Blob file name, relative to the manifest.
    pub blob: String,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `path` (manifest) and `path` with extension `.bin` (parameters).
pub fn save_checkpoint(model: &BpnnModel, path: &Path) -> Result<()> {
    let blob = blob_path(path);
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        params: model
            .params
            .names()
            .iter()
            .zip(model.params.values())
            .map(|(n, v)| ParamEntry { name: n.clone(), shape: v.shape().to_vec() })
            .collect(),
        blob: blob.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string(),
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(path, json)?;
    let bytes: Vec<u8> = model.params.flatten().iter().flat_map(|x| x.to_le_bytes()).collect();
    fs::write(blob, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<BpnnModel> {
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let mut model = BpnnModel::new(manifest.config)?;
    let layout_matches = model.params.len() == manifest.params.len()
        && model
            .params
            .names()
            .iter()
            .zip(model.params.values())
            .zip(&manifest.params)
            .all(|((n, v), e)| *n == e.name && v.shape() == e.shape.as_slice());
    if !layout_matches {
        return Err(Error::Checkpoint("parameter layout does not match the model config".into()));
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let bytes = fs::read(dir.join(&manifest.blob))?;
    if bytes.len() != 8 * model.params.num_scalars() {
        return Err(Error::Checkpoint(format!(
            "blob has {} bytes, expected {}",
            bytes.len(),
            8 * model.params.num_scalars()
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    model.params.assign_flat(&flat);
    Ok(model)
}
