//! File-driven experiment pipeline for `eivuq`.
//!
//! `synth` writes the dataset and its train/test split, `train` fits the
//! ensemble and the MC-dropout baseline, `uq` writes per-query uncertainty
//! reports, and `eval` turns those into coverage, scatter, and flip tables.
//! `repro` runs all four. Every output file is listed in `manifest.json`
//! with its SHA-256 and the digest of the config that produced it.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use config::{ErrorModelConfig, ExperimentConfig, McConfig, NetworkConfig};
pub use error::CliError;
pub use manifest::{Manifest, ManifestEntry};
pub use pipeline::{Command, Pipeline};

use std::path::PathBuf;

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: ExperimentConfig) -> ExperimentConfig {
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg
    }
}

/// Run `command` on a dedicated rayon pool of `threads` workers (the rayon
/// default when `None`). Results do not depend on the thread count.
pub fn run(cfg: ExperimentConfig, command: Command, threads: Option<usize>) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("cannot start thread pool: {e}")))?;
    pool.install(|| Pipeline::new(cfg)?.run(command))
}
