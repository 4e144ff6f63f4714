//! Run manifests: what was run, on what, and what it wrote.
//!
//! Everything here is a function of the inputs, so repeated runs produce
//! identical bytes; no timestamps or host details.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    /// Hash of the command, config and inputs.
    pub run_id: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Input files by role (`data`, `history`, ...), with their SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output files relative to the output directory, with their SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config_sha256: &str, inputs: BTreeMap<String, String>) -> Self {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(config_sha256.as_bytes());
        for (k, v) in &inputs {
            h.update(k.as_bytes());
            h.update(v.as_bytes());
        }
        let run_id = hex::encode(&h.finalize()[..8]);
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            run_id,
            seed,
            config_sha256: config_sha256.into(),
            inputs,
            outputs: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, dir: &Path, relative: &str) -> Result<(), CliError> {
        let hash = file_sha256(&dir.join(relative))?;
        self.outputs.insert(relative.to_string(), hash);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join("manifest.json"), self)
    }
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::other(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::other(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::other(format!("cannot write {}: {e}", path.display())))
}
