//! The five commands. Each stage reads its inputs from the output
//! directory, writes its artifacts there, and records them in the manifest.

use std::path::{Path, PathBuf};

use eivuq::eval;
use eivuq::mcdropout::{self, McDropoutModel, McRecord};
use eivuq::uq::{self, QueryRecord};
use eivuq::{datagen, seed, Dataset, EnsembleModel, ErrorModel, Regime};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::manifest::{sha256_file, Manifest, ManifestEntry};

pub const CONFIG_FILE: &str = "config.json";
pub const DATASET_CSV: &str = "data/dataset.csv";
pub const SCENARIO_JSON: &str = "data/dataset.json";
pub const TRAIN_CSV: &str = "data/train.csv";
pub const TEST_CSV: &str = "data/test.csv";
pub const ENSEMBLE_DIR: &str = "models/ensemble";
pub const ERROR_MODEL_JSON: &str = "models/error_model.json";
pub const MC_MODEL_JSON: &str = "models/mc_dropout.json";
pub const UQ_CSV: &str = "reports/uq.csv";
pub const MC_CSV: &str = "reports/mc_dropout.csv";
pub const COVERAGE_CSV: &str = "reports/coverage.csv";
pub const SCATTER_CSV: &str = "reports/scatter.csv";
pub const FLIPS_CSV: &str = "reports/flips.csv";
pub const SUMMARY_JSON: &str = "reports/summary.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synth,
    Train,
    Uq,
    Eval,
    Repro,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Uq => "uq",
            Command::Eval => "eval",
            Command::Repro => "repro",
        }
    }
}

pub struct Pipeline {
    cfg: ExperimentConfig,
    out: PathBuf,
    digest: String,
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| eivuq::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn remove_if_exists(path: &Path) -> Result<(), CliError> {
    let res = if path.is_dir() {
        std::fs::remove_dir_all(path)
    } else if path.exists() {
        std::fs::remove_file(path)
    } else {
        Ok(())
    };
    res.map_err(|e| {
        CliError::Core(eivuq::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let out = cfg.output_dir.clone();
        ensure_dir(&out)?;
        let digest = cfg.digest();
        Ok(Pipeline { cfg, out, digest })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn require(&self, rel: &str, command: Command) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::MissingArtifact {
                artifact: p.display().to_string(),
                command: command.name(),
            })
        }
    }

    fn record(&self, command: Command, rel_paths: &[String]) -> Result<(), CliError> {
        let entries = rel_paths
            .iter()
            .map(|rel| {
                Ok(ManifestEntry {
                    path: rel.clone(),
                    sha256: sha256_file(&self.path(rel))?,
                    command: command.name().into(),
                    config_digest: self.digest.clone(),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let mut manifest = Manifest::load_or_default(&self.out)?;
        // Files from a stage that was just rerun are replaced wholesale.
        manifest.entries.retain(|e| e.command != command.name());
        manifest.merge(entries);
        manifest.save(&self.out)
    }

    pub fn run(&self, command: Command) -> Result<(), CliError> {
        match command {
            Command::Synth => self.synth(),
            Command::Train => self.train(),
            Command::Uq => self.uq(),
            Command::Eval => self.eval(),
            Command::Repro => {
                self.synth()?;
                self.train()?;
                self.uq()?;
                self.eval()
            }
        }
    }

    /// Generate or load the dataset and split it into train and test.
    pub fn synth(&self) -> Result<(), CliError> {
        ensure_dir(&self.path("data"))?;
        let mut written = vec![CONFIG_FILE.to_string(), DATASET_CSV.to_string()];
        eivuq::io::write_json(&self.path(CONFIG_FILE), &self.cfg)?;
        let data = match (&self.cfg.scenario, &self.cfg.dataset) {
            (Some(spec), _) => {
                let data = datagen::generate(spec)?;
                data.write_csv(&self.path(DATASET_CSV))?;
                eivuq::io::write_json(&self.path(SCENARIO_JSON), spec)?;
                written.push(SCENARIO_JSON.into());
                data
            }
            (None, Some(path)) => {
                let data = Dataset::read_csv(path)?;
                data.write_csv(&self.path(DATASET_CSV))?;
                remove_if_exists(&self.path(SCENARIO_JSON))?;
                data
            }
            (None, None) => unreachable!("validated config has a data source"),
        };
        let (train, test) = datagen::split(
            &data,
            self.cfg.train_fraction,
            seed::derive_named(self.cfg.master_seed, "split"),
        )?;
        train.write_csv(&self.path(TRAIN_CSV))?;
        test.write_csv(&self.path(TEST_CSV))?;
        written.extend([TRAIN_CSV.to_string(), TEST_CSV.to_string()]);
        log::info!("synth: {} train rows, {} test rows", train.len(), test.len());
        self.record(Command::Synth, &written)
    }

    /// Fit the bootstrap ensemble, the optional MC-dropout baseline, and
    /// resolve the error model. Models see ground-truth features when the
    /// dataset has them.
    pub fn train(&self) -> Result<(), CliError> {
        let train = Dataset::read_csv(&self.require(TRAIN_CSV, Command::Synth)?)?.truth_view();
        let p = train.n_features();
        let error_model = self.cfg.error_model.resolve()?;
        if let Some(max) = error_model.max_feature_index() {
            if max >= p {
                return Err(CliError::Config(format!(
                    "error_model refers to feature {max}, but the data has {p} features"
                )));
            }
        }
        ensure_dir(&self.path("models"))?;
        let mut written = Vec::new();

        let spec = self.cfg.network.spec(p, 0.0, 0);
        let ensemble = EnsembleModel::fit_with(
            &train,
            &spec,
            &self.cfg.training,
            self.cfg.ensemble_t,
            seed::derive_named(self.cfg.master_seed, "ensemble"),
            self.cfg.bootstrap,
        )?;
        let dir = self.path(ENSEMBLE_DIR);
        remove_if_exists(&dir)?;
        ensemble.save(&dir)?;
        let mut files: Vec<String> = std::fs::read_dir(&dir)
            .map_err(|e| eivuq::Error::Io {
                path: dir.clone(),
                source: e,
            })?
            .filter_map(|e| e.ok())
            .map(|e| format!("{ENSEMBLE_DIR}/{}", e.file_name().to_string_lossy()))
            .collect();
        files.sort();
        written.extend(files);
        log::info!("train: ensemble of {} members", ensemble.size());

        error_model.save(&self.path(ERROR_MODEL_JSON))?;
        written.push(ERROR_MODEL_JSON.into());

        match &self.cfg.mc_dropout {
            Some(mc) => {
                let spec = self
                    .cfg
                    .network
                    .spec(p, mc.rate, seed::derive_named(self.cfg.master_seed, "mc-init"));
                let cfg = eivuq::TrainConfig {
                    seed: seed::derive_named(self.cfg.master_seed, "mc-train"),
                    ..self.cfg.training.clone()
                };
                let model = mcdropout::fit_mc(&train, &spec, &cfg, mc.passes)?;
                model.save(&self.path(MC_MODEL_JSON))?;
                written.push(MC_MODEL_JSON.into());
            }
            None => remove_if_exists(&self.path(MC_MODEL_JSON))?,
        }
        self.record(Command::Train, &written)
    }

    /// Per-query EIV and non-EIV reports on the observed test features.
    pub fn uq(&self) -> Result<(), CliError> {
        let test = Dataset::read_csv(&self.require(TEST_CSV, Command::Synth)?)?;
        self.require(&format!("{ENSEMBLE_DIR}/{}", eivuq::ensemble::MANIFEST_FILE), Command::Train)?;
        let ensemble = EnsembleModel::load(&self.path(ENSEMBLE_DIR))?;
        let error_model = ErrorModel::load(&self.require(ERROR_MODEL_JSON, Command::Train)?)?;
        ensure_dir(&self.path("reports"))?;

        let records = uq_records(&ensemble, &error_model, &test)?;
        uq::write_records_csv(&self.path(UQ_CSV), &records)?;
        let mut written = vec![UQ_CSV.to_string()];

        if self.cfg.mc_dropout.is_some() {
            let model = McDropoutModel::load(&self.require(MC_MODEL_JSON, Command::Train)?)?;
            let records = mc_records(&model, &test)?;
            mcdropout::write_records_csv(&self.path(MC_CSV), &records)?;
            written.push(MC_CSV.into());
        } else {
            remove_if_exists(&self.path(MC_CSV))?;
        }
        let flips = records.iter().filter(|r| r.flip).count();
        log::info!("uq: {} queries, {flips} flips", records.len());
        self.record(Command::Uq, &written)
    }

    /// Coverage curves, scatter table, flip report, and summary.
    pub fn eval(&self) -> Result<(), CliError> {
        let records = uq::read_records_csv(&self.require(UQ_CSV, Command::Uq)?)?;
        let mc = if self.cfg.mc_dropout.is_some() {
            Some(mcdropout::read_records_csv(&self.require(MC_CSV, Command::Uq)?)?)
        } else {
            None
        };
        let thresholds = eval::threshold_grid(self.cfg.thresholds);
        let labels: Vec<u8> = records.iter().map(|r| r.true_label).collect();

        let mut curves = Vec::new();
        let mut push_curve = |u: Vec<f64>, predicted: Vec<u8>, labels: &[u8], tag: &str| -> Result<(), CliError> {
            let wrong = eval::misclassified_mask(&predicted, labels)?;
            match eval::coverage_curve(&u, &wrong, &thresholds, tag) {
                Ok(c) => curves.push(c),
                Err(eivuq::Error::NoMisclassifications) => {
                    log::warn!("eval: no misclassifications for `{tag}`; curve omitted")
                }
                Err(e) => return Err(e.into()),
            }
            Ok(())
        };
        let noneiv_pred: Vec<u8> = records.iter().map(|r| r.class_noneiv).collect();
        push_curve(
            records.iter().map(|r| r.u_noneiv).collect(),
            noneiv_pred.clone(),
            &labels,
            "non_eiv",
        )?;
        push_curve(
            records.iter().map(|r| r.u_eiv).collect(),
            records.iter().map(|r| r.class_eiv).collect(),
            &labels,
            "eiv",
        )?;
        let wrong = eval::misclassified_mask(&noneiv_pred, &labels)?;
        push_curve(
            wrong.iter().map(|&w| if w { 0.5 } else { 0.0 }).collect(),
            noneiv_pred,
            &labels,
            "ideal",
        )?;
        let mut mc_accuracy = None;
        if let Some(mc) = &mc {
            let mc_labels: Vec<u8> = mc.iter().map(|r| r.true_label).collect();
            let predicted: Vec<u8> = mc.iter().map(|r| r.predicted_class).collect();
            mc_accuracy = Some(eval::accuracy(&predicted, &mc_labels)?);
            push_curve(mc.iter().map(|r| r.uncertainty).collect(), predicted, &mc_labels, mcdropout::REGIME)?;
        }

        let scatter = eval::scatter_table(&records)?;
        let flips = eval::flip_report(&records, self.cfg.proximity_band)?;
        let summary = eval::summarize(&records, &flips, &curves, mc_accuracy)?;

        eval::write_curves_csv(&self.path(COVERAGE_CSV), &curves)?;
        eval::write_scatter_csv(&self.path(SCATTER_CSV), &scatter)?;
        eval::write_flip_csv(&self.path(FLIPS_CSV), &flips)?;
        eivuq::io::write_json(&self.path(SUMMARY_JSON), &summary)?;
        log::info!(
            "eval: accuracy {:.4} (non-EIV), {} flips",
            summary.accuracy_noneiv,
            summary.flips.flips()
        );
        self.record(
            Command::Eval,
            &[COVERAGE_CSV, SCATTER_CSV, FLIPS_CSV, SUMMARY_JSON].map(String::from),
        )
    }
}

/// One [`QueryRecord`] per test row, computed in parallel and kept in row
/// order.
pub fn uq_records(ensemble: &EnsembleModel, error_model: &ErrorModel, test: &Dataset) -> Result<Vec<QueryRecord>, CliError> {
    let rows: Vec<usize> = (0..test.len()).collect();
    let records = rows
        .par_iter()
        .map(|&i| {
            let r = uq::uq_report(ensemble, error_model, test.features.row(i))?;
            Ok(QueryRecord::new(i, &r, test.labels[i]))
        })
        .collect::<eivuq::Result<Vec<_>>>()?;
    Ok(records)
}

pub fn mc_records(model: &McDropoutModel, test: &Dataset) -> Result<Vec<McRecord>, CliError> {
    let rows: Vec<usize> = (0..test.len()).collect();
    let records = rows
        .par_iter()
        .map(|&i| {
            let p = model.predict(test.features.row(i))?;
            Ok(McRecord::new(i, &p, test.labels[i]))
        })
        .collect::<eivuq::Result<Vec<_>>>()?;
    Ok(records)
}

/// Non-EIV moments of every test query, for inspecting `Var[Δ]` directly.
pub fn noneiv_moments(ensemble: &EnsembleModel, test: &Dataset) -> Result<Vec<eivuq::MomentEstimate>, CliError> {
    use eivuq::LogitSource;
    let rows: Vec<usize> = (0..test.len()).collect();
    let moments = rows
        .par_iter()
        .map(|&i| {
            let logits = ensemble.logits_over(&[test.features.row(i).to_vec()])?;
            let m = uq::moments_noneiv(&logits)?;
            debug_assert_eq!(m.regime, Regime::NonEiv);
            Ok(m)
        })
        .collect::<eivuq::Result<Vec<_>>>()?;
    Ok(moments)
}
