//! Run manifests: every command records its resolved invocation, input
//! hashes, and output hashes beside its artifacts, with no timestamps, so
//! a manifest pins its outputs byte-for-byte.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileStamp {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Fully resolved argv (defaults made explicit); rerunning it
    /// reproduces the outputs.
    pub command: Vec<String>,
    pub seed: u64,
    pub inputs: Vec<FileStamp>,
    pub outputs: Vec<FileStamp>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        fs::read(path).with_context(|| format!("cannot hash {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Write bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp-partial");
    fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path)
        .with_context(|| format!("cannot finalize {}", path.display()))?;
    Ok(())
}

/// Collects output stamps while a command runs, then seals the manifest.
pub struct ManifestBuilder {
    manifest: RunManifest,
    out_dir: PathBuf,
}

impl ManifestBuilder {
    pub fn new(command: Vec<String>, seed: u64, out_dir: &Path) -> Self {
        Self {
            manifest: RunManifest {
                tool: "incbounds".to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                command,
                seed,
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
            out_dir: out_dir.to_path_buf(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.push(FileStamp {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Write one artifact atomically under the output directory and stamp it.
    pub fn write_output(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        write_atomic(&path, bytes)?;
        self.manifest
            .outputs
            .push(FileStamp { path: name.to_string(), sha256: hex::encode(Sha256::digest(bytes)) });
        Ok(path)
    }

    /// Write the manifest itself as `<stem>_manifest.json`.
    pub fn seal(self, stem: &str) -> Result<PathBuf> {
        let path = self.out_dir.join(format!("{stem}_manifest.json"));
        let json = serde_json::to_string_pretty(&self.manifest)?;
        write_atomic(&path, json.as_bytes())?;
        Ok(path)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read manifest {}", path.display()))?;
    serde_json::from_str(&text).context("manifest is not valid JSON")
}
