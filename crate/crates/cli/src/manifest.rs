//! Dataset manifests: a JSON list of instance files with optional labels.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use bpnn_core::factor_graph::read_json;
use bpnn_core::generators::{cnf_to_factor_graph, parse_dimacs};
use bpnn_core::training::LabeledInstance;
use bpnn_core::FactorGraph;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Subcommand that produced the files.
    pub command: String,
    /// Generator parameters as given on the command line.
    pub params: serde_json::Value,
    pub seed: Option<u64>,
    pub instances: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    /// Exact `ln Z`; absent when the oracle was out of reach or Z = 0.
    pub ln_z: Option<f64>,
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

/// A manifest together with the directory its paths are relative to.
#[derive(Clone, Debug)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub base: PathBuf,
}

impl LoadedManifest {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let manifest: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { manifest, base })
    }

    pub fn entry_path(&self, e: &ManifestEntry) -> PathBuf {
        self.base.join(&e.path)
    }

    /// Labeled instances in manifest order; unlabeled entries are skipped
    /// with a warning.
    pub fn labeled(&self) -> anyhow::Result<Vec<LabeledInstance>> {
        let mut out = Vec::new();
        for e in &self.manifest.instances {
            match e.ln_z {
                Some(z) => out.push(LabeledInstance::new(load_graph(&self.entry_path(e))?, z, e.tag.clone())?),
                None => log::warn!("skipping unlabeled instance {}", e.path),
            }
        }
        if out.is_empty() {
            bail!("manifest has no labeled instances");
        }
        Ok(out)
    }
}

impl Manifest {
    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// Reads factor-graph JSON, or DIMACS CNF for a `.cnf` extension.
pub fn load_graph(path: &Path) -> anyhow::Result<FactorGraph> {
    if path.extension().is_some_and(|e| e == "cnf") {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cnf = parse_dimacs(&text).with_context(|| format!("parsing {}", path.display()))?;
        return Ok(cnf_to_factor_graph(&cnf, crate::DEFAULT_MAX_ARITY)?);
    }
    read_json(path).with_context(|| format!("loading {}", path.display()))
}
