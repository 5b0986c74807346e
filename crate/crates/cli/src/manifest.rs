use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::files::write_json;

pub const MANIFEST_NAME: &str = "manifest.json";

/// A file read or written by a run, with its content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// What a run did, written next to its outputs.
///
/// Two runs whose `config_sha256` and input hashes agree produce the same
/// output bytes; only `wall_clock_seconds` and the paths may differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub threads: Option<usize>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub wall_clock_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn artifact(role: &str, path: &Path) -> anyhow::Result<Artifact> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(Artifact {
        role: role.to_string(),
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
    })
}

/// Collects a manifest while a command runs.
pub struct ManifestBuilder {
    started: Instant,
    manifest: RunManifest,
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<(String, PathBuf)>,
}

impl ManifestBuilder {
    pub fn start(command: &str, config: &impl Serialize, seed: u64, threads: Option<usize>) -> anyhow::Result<Self> {
        let config = serde_json::to_value(config)?;
        let config_sha256 = sha256_hex(&serde_json::to_vec(&config)?);
        Ok(Self {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
                config_sha256,
                config,
                seed,
                threads,
                inputs: Vec::new(),
                outputs: Vec::new(),
                wall_clock_seconds: 0.0,
            },
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, role: &str, path: &Path) {
        self.inputs.push((role.to_string(), path.to_path_buf()));
    }

    pub fn output(&mut self, role: &str, path: &Path) {
        self.outputs.push((role.to_string(), path.to_path_buf()));
    }

    /// Hashes every artifact and writes `dir/manifest.json`.
    pub fn finish(mut self, dir: &Path) -> anyhow::Result<RunManifest> {
        for (role, path) in &self.inputs {
            self.manifest.inputs.push(artifact(role, path)?);
        }
        for (role, path) in &self.outputs {
            self.manifest.outputs.push(artifact(role, path)?);
        }
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        write_json(&dir.join(MANIFEST_NAME), &self.manifest)?;
        Ok(self.manifest)
    }
}
