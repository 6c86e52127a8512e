//! Versioned JSON documents for networks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layer, Network, NetworkSpec};
use crate::error::{Error, Result};

pub const NETWORK_FORMAT: &str = "eivuq-network";
pub const NETWORK_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    format: String,
    version: u32,
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

impl Network {
    /// JSON document with the `NetworkSpec` and row-major weights. Floats are written
    /// in shortest round-trip form, so loading restores identical bits.
    pub fn to_json(&self) -> String {
        let doc = NetworkDoc {
            format: NETWORK_FORMAT.into(),
            version: NETWORK_VERSION,
            spec: self.spec.clone(),
            layers: self.layers.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Network> {
        let doc: NetworkDoc =
            serde_json::from_str(text).map_err(|e| Error::Data(format!("network document: {e}")))?;
        if doc.format != NETWORK_FORMAT || doc.version != NETWORK_VERSION {
            return Err(Error::Data(format!(
                "unsupported network document {} v{}",
                doc.format, doc.version
            )));
        }
        Network::from_layers(doc.spec, doc.layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Network> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Network::from_json(&text)
    }
}
