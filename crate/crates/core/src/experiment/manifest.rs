//! Run manifest: everything needed to repeat a run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::dataset_files;
use crate::error::{Error, Result};

use super::PTC_PARTS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub command_line: Vec<String>,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of every input file, keyed by file name.
    pub dataset_checksums: BTreeMap<String, String>,
    pub tool_version: String,
    pub started_at: String,
}

impl RunManifest {
    pub fn new(command: &str, command_line: Vec<String>, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            command_line,
            config,
            seeds: BTreeMap::new(),
            dataset_checksums: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    /// Writes `dir/config.json`. An existing manifest is kept if it describes
    /// the same command and configuration, so interrupted runs can resume.
    pub fn write_new(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.json");
        if path.exists() {
            let prev = Self::read(&path)?;
            if prev.command != self.command || prev.config != self.config {
                return Err(Error::Config(format!(
                    "{} belongs to a different run; choose another run id or pass --force",
                    path.display()
                )));
            }
            return Ok(());
        }
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Names of the on-disk datasets behind `name` (PTC expands to its parts).
pub fn expand_dataset(name: &str) -> Vec<String> {
    if name.eq_ignore_ascii_case("PTC") {
        PTC_PARTS.iter().map(|s| s.to_string()).collect()
    } else {
        vec![name.to_string()]
    }
}

/// SHA-256 of each existing input file of `name`.
pub fn dataset_checksums(root: &Path, name: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for ds in expand_dataset(name) {
        for p in dataset_files(root, &ds) {
            if !p.exists() {
                continue;
            }
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            out.insert(name, hex::encode(Sha256::digest(&bytes)));
        }
    }
    Ok(out)
}
