// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run manifests and the output directory they describe.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Where the samples came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    /// File path, or a description of the generated default.
    pub source: String,
    pub sha256: Option<String>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run. Two runs with equal manifests,
/// timestamps and `threads` aside, write byte-identical payloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Every parsed flag, defaults included.
    pub flags: serde_json::Value,
    /// The seed actually used.
    pub seed: u64,
    pub checkpoint_sha256: Option<String>,
    pub data: Option<DataSource>,
    pub code_version: String,
    pub threads: usize,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    /// Fields that must match for two runs to be comparable.
    pub fn identity(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).unwrap_or_default();
        if let Some(obj) = v.as_object_mut() {
            for key in ["started_unix_ms", "finished_unix_ms", "threads", "outputs"] {
                obj.remove(key);
            }
            if let Some(flags) = obj.get_mut("flags").and_then(|f| f.get_mut("common")).and_then(|c| c.as_object_mut()) {
                flags.remove("threads");
                flags.remove("out");
            }
        }
        v
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Output directory that remembers what was written into it.
pub struct OutDir {
    root: PathBuf,
    written: Vec<OutputFile>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Renders into memory, writes `name`, records its hash.
    pub fn write(&mut self, name: &str, render: impl FnOnce(&mut Vec<u8>) -> neuronpath::Result<()>) -> Result<PathBuf> {
        let mut bytes = Vec::new();
        render(&mut bytes)?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        let mut f = fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        f.write_all(bytes).with_context(|| format!("cannot write {}", path.display()))?;
        self.written.retain(|o| o.file != name);
        self.written.push(OutputFile {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    pub fn finish(self, mut manifest: RunManifest) -> Result<RunManifest> {
        manifest.outputs = self.written;
        manifest.finished_unix_ms = unix_ms();
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?;
        Ok(manifest)
    }
}
