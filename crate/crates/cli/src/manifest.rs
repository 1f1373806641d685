use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path) -> CliResult<Self> {
        let data = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&data)),
            bytes: data.len() as u64,
        })
    }
}

/// One per run directory: what ran, on which inputs, with which settings.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

pub struct ManifestBuilder {
    command: String,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    started: u128,
}

impl ManifestBuilder {
    pub fn start(command: &str, inputs: &[&Path]) -> Self {
        Self {
            command: command.to_string(),
            seed: None,
            config: serde_json::Value::Null,
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
            started: now_ms(),
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn config(mut self, config: &impl Serialize) -> CliResult<Self> {
        self.config = serde_json::to_value(config).map_err(layerwise_uq::Error::from)?;
        Ok(self)
    }

    /// Hashes inputs and the listed outputs of `dir`, then writes the manifest there.
    pub fn finish(self, dir: &Path, outputs: &[&str]) -> CliResult<()> {
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            threads: rayon::current_num_threads(),
            config: self.config,
            inputs: self
                .inputs
                .iter()
                .map(|p| FileDigest::of(p))
                .collect::<CliResult<_>>()?,
            outputs: outputs
                .iter()
                .map(|name| {
                    let mut d = FileDigest::of(&dir.join(name))?;
                    d.path = (*name).to_string();
                    Ok(d)
                })
                .collect::<CliResult<_>>()?,
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
        };
        crate::output::write_json(&dir.join(MANIFEST_FILE), &manifest)
    }
}
