//! Known discrete distributions of true feature values given observed ones.
//!
//! Each uncertain feature carries a table mapping an observed value to the
//! possible true values and their probabilities. Features without a table
//! are taken as exact. Uncertain features are independent of each other
//! unless they are grouped in a [`JointErrorSpec`], and the joint support of
//! an observation is the Cartesian product of the per-factor supports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_SUPPORT: usize = 4096;

/// Tolerance on each conditional distribution summing to one.
pub const TABLE_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub value: f64,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub observed: f64,
    pub outcomes: Vec<Outcome>,
}

/// Conditional distribution of one feature's true value given its observed
/// value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureErrorSpec {
    pub feature_index: usize,
    pub table: Vec<TableEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointOutcome {
    pub values: Vec<f64>,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointTableEntry {
    pub observed: Vec<f64>,
    pub outcomes: Vec<JointOutcome>,
}

/// Pre-enumerated joint distribution over a group of features, for errors
/// that are correlated across features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointErrorSpec {
    pub feature_indices: Vec<usize>,
    pub table: Vec<JointTableEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    #[serde(default)]
    pub specs: Vec<FeatureErrorSpec>,
    #[serde(default)]
    pub joint: Vec<JointErrorSpec>,
    #[serde(default = "default_max_support")]
    pub max_support: usize,
}

fn default_max_support() -> usize {
    DEFAULT_MAX_SUPPORT
}

/// One candidate true input with its probability.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportPoint {
    pub x: Vec<f64>,
    pub probability: f64,
}

fn check_distribution(probs: impl Iterator<Item = f64>, what: impl Fn() -> String) -> Result<()> {
    let mut sum = 0.0;
    let mut n = 0;
    for p in probs {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{}: probability {p} outside [0, 1]", what())));
        }
        sum += p;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Config(format!("{}: empty support", what())));
    }
    if (sum - 1.0).abs() > TABLE_SUM_TOL {
        return Err(Error::Config(format!("{}: probabilities sum to {sum}", what())));
    }
    Ok(())
}

impl FeatureErrorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.table.is_empty() {
            return Err(Error::Config(format!(
                "error table for feature {} is empty",
                self.feature_index
            )));
        }
        for (k, e) in self.table.iter().enumerate() {
            if self.table[..k].iter().any(|o| o.observed == e.observed) {
                return Err(Error::Config(format!(
                    "feature {}: observed value {} listed twice",
                    self.feature_index, e.observed
                )));
            }
            if !e.observed.is_finite() || e.outcomes.iter().any(|o| !o.value.is_finite()) {
                return Err(Error::NonFinite { what: "error table" });
            }
            check_distribution(e.outcomes.iter().map(|o| o.probability), || {
                format!("feature {}, observed {}", self.feature_index, e.observed)
            })?;
        }
        Ok(())
    }

    fn outcomes_for(&self, observed: f64) -> Result<&[Outcome]> {
        self.table
            .iter()
            .find(|e| e.observed == observed)
            .map(|e| e.outcomes.as_slice())
            .ok_or(Error::MissingObservation {
                feature: self.feature_index,
                value: observed,
            })
    }

    /// Error table of a binary feature read through a test with the given
    /// sensitivity `P(obs=1 | true=1)` and specificity `P(obs=0 | true=0)`,
    /// inverted by Bayes' rule with prior `P(true=1) = prevalence`.
    pub fn from_sensitivity_specificity(
        feature_index: usize,
        sensitivity: f64,
        specificity: f64,
        prevalence: f64,
    ) -> Result<Self> {
        if !(sensitivity > 0.0 && sensitivity <= 1.0) {
            return Err(Error::Config(format!("sensitivity {sensitivity} outside (0, 1]")));
        }
        if !(specificity > 0.0 && specificity <= 1.0) {
            return Err(Error::Config(format!("specificity {specificity} outside (0, 1]")));
        }
        if !(prevalence > 0.0 && prevalence < 1.0) {
            return Err(Error::Config(format!("prevalence {prevalence} outside (0, 1)")));
        }
        let mut table = Vec::with_capacity(2);
        for observed in [0u8, 1] {
            // Joint probabilities P(true = t, obs = observed).
            let (with_pos, with_neg) = if observed == 1 {
                (sensitivity * prevalence, (1.0 - specificity) * (1.0 - prevalence))
            } else {
                ((1.0 - sensitivity) * prevalence, specificity * (1.0 - prevalence))
            };
            let evidence = with_pos + with_neg;
            if evidence <= 0.0 {
                return Err(Error::ImpossibleObservation {
                    feature: feature_index,
                    observed,
                });
            }
            let p_pos = with_pos / evidence;
            let outcomes = [(0.0, 1.0 - p_pos), (1.0, p_pos)]
                .into_iter()
                .filter(|&(_, p)| p > 0.0)
                .map(|(value, probability)| Outcome { value, probability })
                .collect();
            table.push(TableEntry {
                observed: f64::from(observed),
                outcomes,
            });
        }
        let spec = FeatureErrorSpec { feature_index, table };
        spec.validate()?;
        Ok(spec)
    }

    /// `P(true = value | obs = observed)`, zero for unlisted values.
    pub fn probability(&self, observed: f64, value: f64) -> Result<f64> {
        Ok(self
            .outcomes_for(observed)?
            .iter()
            .filter(|o| o.value == value)
            .map(|o| o.probability)
            .sum())
    }
}

impl JointErrorSpec {
    pub fn validate(&self) -> Result<()> {
        let k = self.feature_indices.len();
        if k == 0 || self.table.is_empty() {
            return Err(Error::Config("joint error spec is empty".into()));
        }
        for e in &self.table {
            if e.observed.len() != k || e.outcomes.iter().any(|o| o.values.len() != k) {
                return Err(Error::Dimension {
                    expected: k,
                    got: e.observed.len(),
                });
            }
            check_distribution(e.outcomes.iter().map(|o| o.probability), || {
                format!("joint features {:?}, observed {:?}", self.feature_indices, e.observed)
            })?;
        }
        Ok(())
    }
}

/// One independent block of the enumeration: the features it covers and the
/// weighted alternatives for them.
struct Factor {
    first: usize,
    features: Vec<usize>,
    alternatives: Vec<(Vec<f64>, f64)>,
}

impl Default for ErrorModel {
    fn default() -> Self {
        Self::degenerate()
    }
}

impl ErrorModel {
    /// Every feature observed exactly: the support of any observation is the
    /// observation itself with probability 1.
    pub fn degenerate() -> Self {
        ErrorModel {
            specs: Vec::new(),
            joint: Vec::new(),
            max_support: DEFAULT_MAX_SUPPORT,
        }
    }

    pub fn new(specs: Vec<FeatureErrorSpec>) -> Result<Self> {
        let m = ErrorModel {
            specs,
            ..Self::degenerate()
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_max_support(mut self, max_support: usize) -> Self {
        self.max_support = max_support;
        self
    }

    pub fn is_degenerate(&self) -> bool {
        self.specs.is_empty() && self.joint.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_support == 0 {
            return Err(Error::Config("max_support must be positive".into()));
        }
        let mut seen = Vec::new();
        for s in &self.specs {
            s.validate()?;
            seen.push(s.feature_index);
        }
        for j in &self.joint {
            j.validate()?;
            seen.extend(&j.feature_indices);
        }
        let n = seen.len();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != n {
            return Err(Error::Config("error specs must cover disjoint features".into()));
        }
        Ok(())
    }

    /// Highest feature index the model refers to.
    pub fn max_feature_index(&self) -> Option<usize> {
        self.specs
            .iter()
            .map(|s| s.feature_index)
            .chain(self.joint.iter().flat_map(|j| j.feature_indices.iter().copied()))
            .max()
    }

    fn factors(&self, observed: &[f64]) -> Result<Vec<Factor>> {
        let check = |i: usize| {
            if i >= observed.len() {
                Err(Error::Dimension {
                    expected: i + 1,
                    got: observed.len(),
                })
            } else {
                Ok(())
            }
        };
        let mut factors = Vec::new();
        for s in &self.specs {
            check(s.feature_index)?;
            let alternatives = s
                .outcomes_for(observed[s.feature_index])?
                .iter()
                .filter(|o| o.probability > 0.0)
                .map(|o| (vec![o.value], o.probability))
                .collect();
            factors.push(Factor {
                first: s.feature_index,
                features: vec![s.feature_index],
                alternatives,
            });
        }
        for j in &self.joint {
            for &i in &j.feature_indices {
                check(i)?;
            }
            let obs: Vec<f64> = j.feature_indices.iter().map(|&i| observed[i]).collect();
            let entry = j.table.iter().find(|e| e.observed == obs).ok_or(Error::MissingObservation {
                feature: j.feature_indices[0],
                value: obs[0],
            })?;
            factors.push(Factor {
                first: *j.feature_indices.iter().min().expect("validated non-empty"),
                features: j.feature_indices.clone(),
                alternatives: entry
                    .outcomes
                    .iter()
                    .filter(|o| o.probability > 0.0)
                    .map(|o| (o.values.clone(), o.probability))
                    .collect(),
            });
        }
        factors.sort_by_key(|f| f.first);
        Ok(factors)
    }

    /// Number of points [`ErrorModel::enumerate_support`] would produce.
    pub fn support_size(&self, observed: &[f64]) -> Result<usize> {
        Ok(self
            .factors(observed)?
            .iter()
            .fold(1usize, |acc, f| acc.saturating_mul(f.alternatives.len())))
    }

    /// All candidate true inputs for an observation, with joint
    /// probabilities equal to the product of the per-factor probabilities.
    ///
    /// Points are ordered lexicographically: the factor covering the lowest
    /// feature index varies slowest, and each factor follows its table
    /// order. Zero-probability alternatives are dropped.
    pub fn enumerate_support(&self, observed: &[f64]) -> Result<Vec<SupportPoint>> {
        let factors = self.factors(observed)?;
        let size = factors
            .iter()
            .fold(1usize, |acc, f| acc.saturating_mul(f.alternatives.len()));
        if size > self.max_support {
            return Err(Error::SupportOverflow {
                size,
                max: self.max_support,
            });
        }
        let mut points = vec![SupportPoint {
            x: observed.to_vec(),
            probability: 1.0,
        }];
        for f in &factors {
            let mut next = Vec::with_capacity(points.len() * f.alternatives.len());
            for p in &points {
                for (values, prob) in &f.alternatives {
                    let mut x = p.x.clone();
                    for (&i, &v) in f.features.iter().zip(values) {
                        x[i] = v;
                    }
                    next.push(SupportPoint {
                        x,
                        probability: p.probability * prob,
                    });
                }
            }
            points = next;
        }
        Ok(points)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("error model serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: ErrorModel = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        m.validate()?;
        Ok(m)
    }
}
