//! Run manifests written next to every output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_ms: u128,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub tool_version: String,
    pub timing: Timing,
    pub config: Value,
    pub outputs: Vec<String>,
}

/// Orders object keys recursively.
fn canonical(v: &Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            Value::Object(keys.into_iter().map(|k| (k.clone(), canonical(&map[k]))).collect())
        }
        Value::Array(items) => Value::Array(items.iter().map(canonical).collect()),
        other => other.clone(),
    }
}

/// SHA-256 of the config with object keys sorted, so reordering fields in the
/// source document does not change the digest.
pub fn config_digest(config: &Value) -> String {
    let text = serde_json::to_string(&canonical(config)).expect("JSON values serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl RunManifest {
    pub fn new(command: &str, config: Value, seed: u64, started_unix_ms: u128, elapsed_ms: u128, outputs: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            config_digest: config_digest(&config),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timing: Timing {
                started_unix_ms,
                elapsed_ms,
            },
            config: canonical(&config),
            outputs,
        }
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text)
    }
}

/// `out.json` → `out.json.manifest.json`.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
