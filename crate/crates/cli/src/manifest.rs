use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written next to every command's outputs. Timestamps
/// live only here so the other outputs stay byte-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Tool version and on-disk formats the outputs were written with.
    pub artifact_version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<PathBuf>,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, seed: u64, started_unix_ms: u128) -> Self {
        Self {
            command: command.into(),
            config_hash,
            seed,
            artifact_version: format!("openrel {} (dataset openrel-v1, checkpoint v1)", env!("CARGO_PKG_VERSION")),
            started_unix_ms,
            finished_unix_ms: started_unix_ms,
            outputs: Vec::new(),
        }
    }

    /// Writes `manifest.json` into `dir` and returns its path.
    pub fn write(&mut self, dir: &Path) -> Result<PathBuf, CliError> {
        self.finished_unix_ms = now_ms();
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
