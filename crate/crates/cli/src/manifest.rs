//! Run manifests: a content hash over everything that determines the output
//! (command, input digest, hyperparameters, version), so reruns can be
//! checked for reproducibility. Timestamps are recorded but excluded from
//! the hash.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub input_digest: Option<String>,
    pub params: Value,
    pub manifest_hash: String,
    pub created_utc: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, input_digest: Option<String>, params: Value) -> Self {
        // serde_json maps serialize with sorted keys, so this string is a
        // canonical encoding of the deterministic inputs.
        let canonical = format!(
            "{}|{}|{}|{}",
            command,
            env!("CARGO_PKG_VERSION"),
            input_digest.as_deref().unwrap_or("-"),
            serde_json::to_string(&params).expect("params serialize"),
        );
        let manifest_hash = hex_digest(canonical.as_bytes());
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            input_digest,
            params,
            manifest_hash,
            created_utc: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            converged: None,
            iterations: None,
            warnings: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serialize");
        fs::write(path, json + "\n")
    }

    /// First line of every CSV this run emits.
    pub fn csv_header_line(&self) -> String {
        format!("# manifest {}", self.manifest_hash)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn file_digest(path: &Path) -> std::io::Result<String> {
    Ok(hex_digest(&fs::read(path)?))
}
