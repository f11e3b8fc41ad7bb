use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Provenance written next to every output file as `<output>.manifest.json`.
/// Everything except `timestamp` is a pure function of the inputs and flags.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Input role to path and SHA-256 of the file contents.
    pub inputs: BTreeMap<String, InputDigest>,
    pub config: serde_json::Value,
    /// Seconds since the Unix epoch; not part of the reproducible content.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: BTreeMap::new(),
            config,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path, contents: &[u8]) {
        self.inputs.insert(
            role.to_string(),
            InputDigest {
                path: path.display().to_string(),
                sha256: hex::encode(Sha256::digest(contents)),
            },
        );
    }
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Writes `contents` to `path` and the manifest beside it.
pub fn write_with_manifest(path: &Path, contents: &[u8], manifest: &RunManifest) -> std::io::Result<()> {
    fs::write(path, contents)?;
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    fs::write(sidecar_path(path), json)
}
