//! Experiment configuration: one JSON document per experiment.

use std::path::{Path, PathBuf};

use eivuq::errormodel::FeatureErrorSpec;
use eivuq::mcdropout::{DEFAULT_DROPOUT_RATE, DEFAULT_PASSES};
use eivuq::{Activation, Bootstrap, ErrorModel, NetworkSpec, ScenarioSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let spec = NetworkSpec::new(1);
        NetworkConfig {
            hidden_layers: spec.hidden_layers,
            activation: spec.activation,
        }
    }
}

impl NetworkConfig {
    pub fn spec(&self, input_dim: usize, dropout_rate: f64, seed: u64) -> NetworkSpec {
        NetworkSpec {
            input_dim,
            hidden_layers: self.hidden_layers.clone(),
            activation: self.activation,
            dropout_rate,
            seed,
        }
    }
}

/// Source of the input-error distribution used by the EIV regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ErrorModelConfig {
    /// No input errors; the EIV regime coincides with the non-EIV one.
    None,
    /// A saved [`ErrorModel`] JSON file.
    File { path: PathBuf },
    /// Bayes-inverted diagnostic-test channel on each listed binary feature.
    Channel {
        sensitivity: f64,
        specificity: f64,
        prevalence: f64,
        features: Vec<usize>,
    },
}

impl ErrorModelConfig {
    pub fn resolve(&self) -> eivuq::Result<ErrorModel> {
        match self {
            ErrorModelConfig::None => Ok(ErrorModel::degenerate()),
            ErrorModelConfig::File { path } => ErrorModel::load(path),
            ErrorModelConfig::Channel {
                sensitivity,
                specificity,
                prevalence,
                features,
            } => {
                let specs = features
                    .iter()
                    .map(|&f| FeatureErrorSpec::from_sensitivity_specificity(f, *sensitivity, *specificity, *prevalence))
                    .collect::<eivuq::Result<Vec<_>>>()?;
                ErrorModel::new(specs)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub rate: f64,
    pub passes: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            rate: DEFAULT_DROPOUT_RATE,
            passes: DEFAULT_PASSES,
        }
    }
}

/// Everything needed to rerun an experiment.
///
/// Exactly one of `scenario` and `dataset` is set. Training, bootstrap, and
/// MC-dropout seeds derive from `master_seed`; `training.seed` is ignored.
/// `output_dir` is not part of the config digest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Option<ScenarioSpec>,
    /// CSV in the layout written by `synth` (`true__` columns optional).
    pub dataset: Option<PathBuf>,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub ensemble_t: usize,
    pub bootstrap: Bootstrap,
    pub error_model: ErrorModelConfig,
    pub mc_dropout: Option<McConfig>,
    pub train_fraction: f64,
    pub proximity_band: f64,
    pub thresholds: usize,
    pub master_seed: u64,
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let scenario = ScenarioSpec::default();
        let error_model = ErrorModelConfig::Channel {
            sensitivity: scenario.sensitivity,
            specificity: scenario.specificity,
            prevalence: scenario.noisy_prevalence,
            features: scenario.noisy_feature_indices.clone(),
        };
        ExperimentConfig {
            scenario: Some(scenario),
            dataset: None,
            network: NetworkConfig::default(),
            training: TrainConfig::default(),
            ensemble_t: 100,
            bootstrap: Bootstrap::Rows,
            error_model,
            mc_dropout: Some(McConfig::default()),
            train_fraction: 0.8,
            proximity_band: eivuq::eval::DEFAULT_PROXIMITY_BAND,
            thresholds: eivuq::eval::DEFAULT_THRESHOLD_COUNT,
            master_seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Parse a config document; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig =
            serde_path_to_error::deserialize(de).map_err(|e| CliError::Config(format!("at `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg_err = |m: String| Err(CliError::Config(m));
        match (&self.scenario, &self.dataset) {
            (Some(s), None) => s.validate().map_err(|e| CliError::Config(format!("scenario: {e}")))?,
            (None, Some(_)) => {}
            _ => return cfg_err("exactly one of `scenario` and `dataset` must be set".into()),
        }
        if self.ensemble_t == 0 {
            return cfg_err("`ensemble_t` must be at least 1".into());
        }
        self.training
            .validate()
            .map_err(|e| CliError::Config(format!("training: {e}")))?;
        self.network
            .spec(1, 0.0, 0)
            .validate()
            .map_err(|e| CliError::Config(format!("network: {e}")))?;
        if let Some(mc) = &self.mc_dropout {
            if !(mc.rate > 0.0 && mc.rate < 1.0) || mc.passes == 0 {
                return cfg_err("`mc_dropout` needs rate in (0, 1) and passes >= 1".into());
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return cfg_err("`train_fraction` must lie in (0, 1)".into());
        }
        if self.proximity_band.is_nan() || self.proximity_band < 0.0 {
            return cfg_err("`proximity_band` must be >= 0".into());
        }
        if self.thresholds < 2 {
            return cfg_err("`thresholds` must be at least 2".into());
        }
        Ok(())
    }

    /// Canonical JSON without `output_dir`.
    pub fn canonical_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}
