//! Bootstrap ensembles.
//!
//! Member `t` is trained on its own resample of the training rows (N draws
//! with replacement) with its own network initialization and training seed.
//! All of a member's randomness derives from `(master_seed, t)`, so the
//! result does not depend on how members are scheduled across threads.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, LogitPair, Network, NetworkSpec, TrainConfig};
use crate::seed;

/// Resampled rows with a single class are redrawn at most this many times.
pub const MAX_RESAMPLE_RETRIES: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bootstrap {
    /// Plain case resampling of rows.
    #[default]
    Rows,
    /// Resample each class separately, keeping class counts fixed.
    Stratified,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    pub members: Vec<Network>,
    /// Seed each member's resample and training actually used.
    pub member_seeds: Vec<u64>,
    pub master_seed: u64,
    pub spec: NetworkSpec,
    pub train_cfg: TrainConfig,
    pub bootstrap: Bootstrap,
}

/// Logits of every member at every candidate input, `rows = T`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitMatrix {
    members: usize,
    candidates: usize,
    entries: Vec<LogitPair>,
}

impl LogitMatrix {
    pub fn new(members: usize, candidates: usize, entries: Vec<LogitPair>) -> Result<Self> {
        if members == 0 {
            return Err(Error::Data("logit matrix needs at least one member".into()));
        }
        if entries.len() != members * candidates {
            return Err(Error::Dimension {
                expected: members * candidates,
                got: entries.len(),
            });
        }
        if entries.iter().any(|z| !z.z0.is_finite() || !z.z1.is_finite()) {
            return Err(Error::NonFinite { what: "logits" });
        }
        Ok(LogitMatrix {
            members,
            candidates,
            entries,
        })
    }

    /// Build from rows of `(z0, z1)`, one row per member.
    pub fn from_rows(rows: &[Vec<(f64, f64)>]) -> Result<Self> {
        let candidates = rows.first().map_or(0, Vec::len);
        let mut entries = Vec::new();
        for r in rows {
            if r.len() != candidates {
                return Err(Error::Dimension {
                    expected: candidates,
                    got: r.len(),
                });
            }
            entries.extend(r.iter().map(|&(z0, z1)| LogitPair { z0, z1 }));
        }
        LogitMatrix::new(rows.len(), candidates, entries)
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn candidates(&self) -> usize {
        self.candidates
    }

    pub fn get(&self, member: usize, candidate: usize) -> LogitPair {
        self.entries[member * self.candidates + candidate]
    }

    /// Logits of all members at one candidate.
    pub fn column(&self, candidate: usize) -> impl Iterator<Item = LogitPair> + '_ {
        (0..self.members).map(move |t| self.get(t, candidate))
    }
}

/// Anything that yields a [`LogitMatrix`] for a set of candidate inputs
/// can drive the uncertainty engine, not only bootstrap ensembles.
pub trait LogitSource {
    fn input_dim(&self) -> usize;
    fn logits_over(&self, candidates: &[Vec<f64>]) -> Result<LogitMatrix>;
}

fn member_seed(master: u64, member: usize, attempt: usize) -> u64 {
    let base = seed::derive(master, member as u64);
    if attempt == 0 {
        base
    } else {
        seed::derive(base, attempt as u64)
    }
}

fn resample<R: Rng>(data: &Dataset, scheme: Bootstrap, rng: &mut R) -> Vec<usize> {
    let n = data.len();
    match scheme {
        Bootstrap::Rows => (0..n).map(|_| rng.random_range(0..n)).collect(),
        Bootstrap::Stratified => {
            let mut out = Vec::with_capacity(n);
            for class in [0u8, 1] {
                let rows: Vec<usize> = (0..n).filter(|&i| data.labels[i] == class).collect();
                for _ in 0..rows.len() {
                    out.push(rows[rng.random_range(0..rows.len())]);
                }
            }
            out
        }
    }
}

fn fit_member(
    data: &Dataset,
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    scheme: Bootstrap,
    master_seed: u64,
    member: usize,
) -> Result<(Network, u64)> {
    for attempt in 0..=MAX_RESAMPLE_RETRIES {
        let s = member_seed(master_seed, member, attempt);
        let rows = resample(data, scheme, &mut seed::rng(seed::derive_named(s, "bootstrap")));
        let sample = data.select(&rows);
        if sample.class_counts().contains(&0) {
            log::debug!("member {member}: single-class resample on attempt {attempt}");
            continue;
        }
        let net = Network::new(NetworkSpec {
            seed: seed::derive_named(s, "init"),
            ..spec.clone()
        })?;
        let member_cfg = TrainConfig {
            seed: seed::derive_named(s, "train"),
            ..cfg.clone()
        };
        let trained = nn::train(&net, &sample, &member_cfg)?;
        return Ok((trained, s));
    }
    Err(Error::SingleClassResample {
        member,
        attempts: MAX_RESAMPLE_RETRIES + 1,
    })
}

impl EnsembleModel {
    /// Train `t` members on bootstrap resamples of `data`.
    ///
    /// Members are trained in parallel on the current rayon pool and
    /// collected by index.
    pub fn fit(
        data: &Dataset,
        spec: &NetworkSpec,
        cfg: &TrainConfig,
        t: usize,
        master_seed: u64,
    ) -> Result<Self> {
        Self::fit_with(data, spec, cfg, t, master_seed, Bootstrap::Rows)
    }

    pub fn fit_with(
        data: &Dataset,
        spec: &NetworkSpec,
        cfg: &TrainConfig,
        t: usize,
        master_seed: u64,
        bootstrap: Bootstrap,
    ) -> Result<Self> {
        if t == 0 {
            return Err(Error::Config("ensemble size must be at least 1".into()));
        }
        if data.is_empty() {
            return Err(Error::Data("cannot fit an ensemble on an empty dataset".into()));
        }
        spec.validate()?;
        cfg.validate()?;
        if spec.input_dim != data.n_features() {
            return Err(Error::Dimension {
                expected: spec.input_dim,
                got: data.n_features(),
            });
        }
        let fitted: Vec<(Network, u64)> = (0..t)
            .into_par_iter()
            .map(|m| fit_member(data, spec, cfg, bootstrap, master_seed, m))
            .collect::<Result<_>>()?;
        let (members, member_seeds) = fitted.into_iter().unzip();
        Ok(EnsembleModel {
            members,
            member_seeds,
            master_seed,
            spec: spec.clone(),
            train_cfg: cfg.clone(),
            bootstrap,
        })
    }

    /// Ensemble from already-built networks, e.g. hand-set weights.
    pub fn from_members(members: Vec<Network>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Data("ensemble needs at least one member".into()))?;
        let spec = first.spec().clone();
        if let Some(bad) = members.iter().find(|m| m.input_dim() != spec.input_dim) {
            return Err(Error::Dimension {
                expected: spec.input_dim,
                got: bad.input_dim(),
            });
        }
        Ok(EnsembleModel {
            member_seeds: members.iter().map(|m| m.spec().seed).collect(),
            members,
            master_seed: 0,
            spec,
            train_cfg: TrainConfig::default(),
            bootstrap: Bootstrap::Rows,
        })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }
}

impl LogitSource for EnsembleModel {
    fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    /// Entry `(t, j)` is member `t`'s deterministic logits at candidate `j`.
    fn logits_over(&self, candidates: &[Vec<f64>]) -> Result<LogitMatrix> {
        let mut entries = Vec::with_capacity(self.members.len() * candidates.len());
        for m in &self.members {
            for c in candidates {
                entries.push(m.forward_logits(c)?);
            }
        }
        LogitMatrix::new(self.members.len(), candidates.len(), entries)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct EnsembleManifest {
    format: String,
    version: u32,
    size: usize,
    master_seed: u64,
    member_seeds: Vec<u64>,
    member_files: Vec<String>,
    spec: NetworkSpec,
    train_cfg: TrainConfig,
    train_cfg_digest: String,
    bootstrap: Bootstrap,
}

fn cfg_digest(cfg: &TrainConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl EnsembleModel {
    /// Write `member_NNNN.json` files plus `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let member_files: Vec<String> = (0..self.size()).map(|t| format!("member_{t:04}.json")).collect();
        for (m, f) in self.members.iter().zip(&member_files) {
            m.save(&dir.join(f))?;
        }
        let manifest = EnsembleManifest {
            format: "eivuq-ensemble".into(),
            version: 1,
            size: self.size(),
            master_seed: self.master_seed,
            member_seeds: self.member_seeds.clone(),
            member_files,
            spec: self.spec.clone(),
            train_cfg: self.train_cfg.clone(),
            train_cfg_digest: cfg_digest(&self.train_cfg),
            bootstrap: self.bootstrap,
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: EnsembleManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if manifest.member_files.len() != manifest.size || manifest.member_seeds.len() != manifest.size {
            return Err(Error::Data(format!("{}: inconsistent member counts", path.display())));
        }
        if manifest.train_cfg_digest != cfg_digest(&manifest.train_cfg) {
            return Err(Error::Data(format!("{}: train config digest mismatch", path.display())));
        }
        let members = manifest
            .member_files
            .iter()
            .map(|f| Network::load(&dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        if members.iter().any(|m| m.spec().input_dim != manifest.spec.input_dim) {
            return Err(Error::Data("member input dimension differs from manifest".into()));
        }
        Ok(EnsembleModel {
            members,
            member_seeds: manifest.member_seeds,
            master_seed: manifest.master_seed,
            spec: manifest.spec,
            train_cfg: manifest.train_cfg,
            bootstrap: manifest.bootstrap,
        })
    }
}
