//! MC-dropout baseline: a single network trained with dropout, evaluated by
//! averaging dropout-active forward passes at prediction time.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, class_of, Network, NetworkSpec, TrainConfig};
use crate::seed;
use crate::uq::{predictive_entropy, variation_ratio};

pub const DEFAULT_DROPOUT_RATE: f64 = 0.2;
pub const DEFAULT_PASSES: usize = 100;
pub const REGIME: &str = "mc_dropout";

#[derive(Clone, Debug, PartialEq)]
pub struct McDropoutModel {
    pub net: Network,
    pub n_passes: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McPrediction {
    pub p1: f64,
    pub predicted_class: u8,
    /// Variation ratio of the averaged distribution.
    pub uncertainty: f64,
    pub entropy: f64,
}

impl McDropoutModel {
    pub fn new(net: Network, n_passes: usize, seed: u64) -> Result<Self> {
        let rate = net.spec().dropout_rate;
        if !(rate > 0.0 && rate < 1.0) {
            return Err(Error::Config(format!(
                "MC-dropout needs a dropout rate in (0, 1), got {rate}"
            )));
        }
        if n_passes == 0 {
            return Err(Error::Config("MC-dropout needs at least one pass".into()));
        }
        Ok(McDropoutModel { net, n_passes, seed })
    }

    /// Mean class-1 probability over `n_passes` dropout-active passes.
    ///
    /// The masks come from a stream seeded by the model seed and the exact
    /// bits of `x`, so a query always gets the same answer.
    pub fn predict(&self, x: &[f64]) -> Result<McPrediction> {
        let mut rng = seed::rng(seed::derive(self.seed, seed::hash_features(x)));
        let mut total = 0.0;
        for _ in 0..self.n_passes {
            total += self.net.forward_logits_dropout(x, &mut rng)?.p1();
        }
        let p1 = total / self.n_passes as f64;
        Ok(McPrediction {
            p1,
            predicted_class: class_of(p1),
            uncertainty: variation_ratio(p1)?,
            entropy: predictive_entropy(p1)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let network: serde_json::Value =
            serde_json::from_str(&self.net.to_json()).expect("network JSON is valid");
        let doc = McDoc {
            format: "eivuq-mc-dropout".into(),
            version: 1,
            n_passes: self.n_passes,
            seed: self.seed,
            network,
        };
        crate::io::write_json(path, &doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: McDoc = crate::io::read_json(path)?;
        let net = Network::from_json(&doc.network.to_string())?;
        McDropoutModel::new(net, doc.n_passes, doc.seed)
    }
}

#[derive(Serialize, Deserialize)]
struct McDoc {
    format: String,
    version: u32,
    n_passes: usize,
    seed: u64,
    network: serde_json::Value,
}

/// Train one dropout network on `data`.
pub fn fit_mc(data: &Dataset, spec: &NetworkSpec, cfg: &TrainConfig, n_passes: usize) -> Result<McDropoutModel> {
    if spec.dropout_rate <= 0.0 {
        return Err(Error::Config("MC-dropout baseline requires dropout_rate > 0".into()));
    }
    let net = Network::new(spec.clone())?;
    let trained = nn::train(&net, data, cfg)?;
    McDropoutModel::new(trained, n_passes, seed::derive_named(cfg.seed, "mc-predict"))
}

/// `(p1, uncertainty)` for one query.
pub fn predict_mc(model: &McDropoutModel, x: &[f64]) -> Result<(f64, f64)> {
    let p = model.predict(x)?;
    Ok((p.p1, p.uncertainty))
}

/// One row of the MC-dropout report CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McRecord {
    pub query_id: usize,
    pub regime: String,
    pub predicted_class: u8,
    pub uncertainty: f64,
    pub p1: f64,
    pub entropy: f64,
    pub true_label: u8,
}

impl McRecord {
    pub fn new(query_id: usize, p: &McPrediction, true_label: u8) -> Self {
        McRecord {
            query_id,
            regime: REGIME.into(),
            predicted_class: p.predicted_class,
            uncertainty: p.uncertainty,
            p1: p.p1,
            entropy: p.entropy,
            true_label,
        }
    }
}

pub fn write_records_csv(path: &Path, records: &[McRecord]) -> Result<()> {
    crate::io::write_csv(path, records)
}

pub fn read_records_csv(path: &Path) -> Result<Vec<McRecord>> {
    crate::io::read_csv(path)
}
