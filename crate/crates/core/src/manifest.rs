//! Run manifests: what a command ran with and what it wrote.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved configuration (defaults, then config file, then flags).
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// SHA-256 of the input dataset file, hex encoded.
    pub dataset_hash: Option<String>,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
    pub outputs: Vec<PathBuf>,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn start(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            config,
            seed,
            dataset_hash: None,
            tool_version: TOOL_VERSION.to_string(),
            started_at: unix_now(),
            finished_at: 0.0,
            outputs: Vec::new(),
        }
    }

    /// Stamps the end time and writes the manifest atomically.
    pub fn finish(mut self, path: &Path) -> Result<Self> {
        self.finished_at = unix_now();
        let mut s = serde_json::to_string_pretty(&self)?;
        s.push('\n');
        crate::io::write_atomic(path, s.as_bytes())?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Default manifest location for an output file: `<file>.manifest.json`.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
