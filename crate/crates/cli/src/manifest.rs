//! `manifest.json`: one entry per output file, sorted by path, with no
//! timestamps so identical runs produce identical manifests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub command: String,
    pub config_digest: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| eivuq::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    /// The existing manifest in `out`, or an empty one.
    pub fn load_or_default(out: &Path) -> Result<Self, CliError> {
        let path = out.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        Ok(eivuq::io::read_json(&path)?)
    }

    /// Replace entries by path and keep the list sorted.
    pub fn merge(&mut self, entries: Vec<ManifestEntry>) {
        let mut by_path: BTreeMap<String, ManifestEntry> =
            self.entries.drain(..).map(|e| (e.path.clone(), e)).collect();
        for e in entries {
            by_path.insert(e.path.clone(), e);
        }
        self.entries = by_path.into_values().collect();
    }

    pub fn save(&self, out: &Path) -> Result<(), CliError> {
        Ok(eivuq::io::write_json(&out.join(MANIFEST_FILE), self)?)
    }

    pub fn get(&self, path: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.path == path)
    }
}
