use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::files::write_text;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Run metadata written into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the resolved configuration serialized as JSON.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub code_version: String,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, config: impl Serialize, seed: Option<u64>, inputs: Vec<String>, started_at: u64) -> Self {
        let config = serde_json::to_value(config).expect("configs serialize to JSON");
        RunManifest {
            command: command.to_string(),
            config_hash: config_hash(&config),
            config,
            seed,
            inputs,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at,
            finished_at: now(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        write_text(&dir.join(MANIFEST_FILE), &text)
    }
}
