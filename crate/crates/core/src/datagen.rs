//! Synthetic tabular scenarios.
//!
//! Ground-truth rows hold standard-normal numeric features and Bernoulli
//! binary features. Labels come from a known rule applied to the ground
//! truth (plus optional label flips). The observed copy of each designated
//! noisy binary feature passes through a diagnostic-test channel with
//! `P(obs = 1 | true = 1) = sensitivity` and
//! `P(obs = 0 | true = 0) = specificity`; every other column is observed
//! exactly.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Column, Dataset, Matrix};
use crate::error::{Error, Result};
use crate::errormodel::{ErrorModel, FeatureErrorSpec};
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Sign of a fixed linear score over all features.
    Linear,
    /// `x0 > 0` XOR the first noisy feature (or `x1 > 0` without one).
    XorInteraction,
    /// Rows with gate feature `x0` above its `1 - decisive_fraction`
    /// quantile take the first noisy feature as their label; the rest
    /// follow a linear rule on the remaining numeric features.
    #[default]
    ThresholdMixture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_rows: usize,
    pub n_numeric_features: usize,
    /// Positions of the binary noisy features among the
    /// `n_numeric_features + noisy_feature_indices.len()` columns.
    pub noisy_feature_indices: Vec<usize>,
    pub sensitivity: f64,
    pub specificity: f64,
    pub label_rule: LabelRule,
    pub label_noise: f64,
    pub seed: u64,
    /// `P(true = 1)` of each noisy binary feature.
    #[serde(default = "default_prevalence")]
    pub noisy_prevalence: f64,
    /// Share of rows decided by the noisy feature under
    /// [`LabelRule::ThresholdMixture`].
    #[serde(default = "default_decisive_fraction")]
    pub decisive_fraction: f64,
}

fn default_prevalence() -> f64 {
    0.4
}

fn default_decisive_fraction() -> f64 {
    0.3
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            n_rows: 5000,
            n_numeric_features: 6,
            noisy_feature_indices: vec![6],
            sensitivity: 0.64,
            specificity: 0.98,
            label_rule: LabelRule::ThresholdMixture,
            label_noise: 0.05,
            seed: 0,
            noisy_prevalence: default_prevalence(),
            decisive_fraction: default_decisive_fraction(),
        }
    }
}

impl ScenarioSpec {
    pub fn n_features(&self) -> usize {
        self.n_numeric_features + self.noisy_feature_indices.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_rows == 0 {
            return bad("n_rows must be positive".into());
        }
        let p = self.n_features();
        let mut idx = self.noisy_feature_indices.clone();
        idx.sort_unstable();
        idx.dedup();
        if idx.len() != self.noisy_feature_indices.len() || idx.iter().any(|&i| i >= p) {
            return bad(format!("noisy_feature_indices must be distinct and below {p}"));
        }
        for (name, v) in [("sensitivity", self.sensitivity), ("specificity", self.specificity)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} {v} outside (0, 1]"));
            }
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad(format!("label_noise {} outside [0, 0.5)", self.label_noise));
        }
        if !(self.noisy_prevalence > 0.0 && self.noisy_prevalence < 1.0) {
            return bad("noisy_prevalence must lie in (0, 1)".into());
        }
        if !(self.decisive_fraction > 0.0 && self.decisive_fraction < 1.0) {
            return bad("decisive_fraction must lie in (0, 1)".into());
        }
        let needs = match self.label_rule {
            LabelRule::Linear => (1, 0),
            LabelRule::XorInteraction => {
                if self.noisy_feature_indices.is_empty() {
                    (2, 0)
                } else {
                    (1, 1)
                }
            }
            LabelRule::ThresholdMixture => (2, 1),
        };
        if self.n_numeric_features < needs.0 || self.noisy_feature_indices.len() < needs.1 {
            return bad(format!(
                "{:?} needs at least {} numeric and {} noisy features",
                self.label_rule, needs.0, needs.1
            ));
        }
        Ok(())
    }

    fn numeric_indices(&self) -> Vec<usize> {
        (0..self.n_features())
            .filter(|i| !self.noisy_feature_indices.contains(i))
            .collect()
    }

    /// The error model matching this scenario's channel: Bayes inversion of
    /// the sensitivity and specificity at the noisy features' prevalence.
    pub fn error_model(&self) -> Result<ErrorModel> {
        let specs = self
            .noisy_feature_indices
            .iter()
            .map(|&i| {
                FeatureErrorSpec::from_sensitivity_specificity(
                    i,
                    self.sensitivity,
                    self.specificity,
                    self.noisy_prevalence,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        ErrorModel::new(specs)
    }

    fn label_of(&self, truth: &[f64], numeric: &[usize], gate: f64) -> u8 {
        let weight = |k: usize| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign / ((k + 1) as f64).sqrt()
        };
        let binary = |i: usize| 1.5 * (2.0 * truth[i] - 1.0);
        match self.label_rule {
            LabelRule::Linear => {
                let s: f64 = numeric.iter().enumerate().map(|(k, &i)| weight(k) * truth[i]).sum::<f64>()
                    + self.noisy_feature_indices.iter().map(|&i| binary(i)).sum::<f64>();
                u8::from(s > 0.0)
            }
            LabelRule::XorInteraction => {
                let a = truth[numeric[0]] > 0.0;
                let b = match self.noisy_feature_indices.first() {
                    Some(&i) => truth[i] == 1.0,
                    None => truth[numeric[1]] > 0.0,
                };
                u8::from(a ^ b)
            }
            LabelRule::ThresholdMixture => {
                if truth[numeric[0]] > gate {
                    truth[self.noisy_feature_indices[0]] as u8
                } else {
                    let s: f64 = numeric[1..]
                        .iter()
                        .enumerate()
                        .map(|(k, &i)| weight(k) * truth[i])
                        .sum();
                    u8::from(s > 0.0)
                }
            }
        }
    }
}

/// Draw a dataset for `spec`. Ground-truth features, label flips, and the
/// observation channel each use their own seeded stream.
pub fn generate(spec: &ScenarioSpec) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.n_rows;
    let p = spec.n_features();
    let numeric = spec.numeric_indices();
    let gate = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - spec.decisive_fraction);

    let mut feat_rng = seed::rng(seed::derive_named(spec.seed, "features"));
    let mut label_rng = seed::rng(seed::derive_named(spec.seed, "labels"));
    let mut chan_rng = seed::rng(seed::derive_named(spec.seed, "channel"));

    let mut truth = Matrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    for r in 0..n {
        let row = truth.row_mut(r);
        for (i, v) in row.iter_mut().enumerate() {
            *v = if spec.noisy_feature_indices.contains(&i) {
                f64::from(u8::from(feat_rng.random::<f64>() < spec.noisy_prevalence))
            } else {
                feat_rng.sample(StandardNormal)
            };
        }
        let mut y = spec.label_of(truth.row(r), &numeric, gate);
        if label_rng.random::<f64>() < spec.label_noise {
            y = 1 - y;
        }
        labels.push(y);
    }

    let mut observed = truth.clone();
    for r in 0..n {
        for &i in &spec.noisy_feature_indices {
            let u: f64 = chan_rng.random();
            let t = truth.get(r, i);
            let obs = if t == 1.0 {
                u < spec.sensitivity
            } else {
                u >= spec.specificity
            };
            observed.set(r, i, f64::from(u8::from(obs)));
        }
    }

    let columns = (0..p)
        .map(|i| Column {
            name: format!("x{i}"),
            binary: spec.noisy_feature_indices.contains(&i),
        })
        .collect();
    let ds = Dataset {
        columns,
        features: observed,
        true_features: Some(truth),
        labels,
    };
    ds.validate()?;
    Ok(ds)
}

/// Seeded shuffle of the rows into `⌊N·f⌋` training rows and the rest.
pub fn split(data: &Dataset, train_fraction: f64, seed_: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train_fraction {train_fraction} outside (0, 1)")));
    }
    let n_train = (data.len() as f64 * train_fraction).floor() as usize;
    if n_train == 0 || n_train == data.len() {
        return Err(Error::Config(format!(
            "train_fraction {train_fraction} of {} rows leaves one side empty",
            data.len()
        )));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut seed::rng(seed::derive_named(seed_, "split")));
    let (train, test) = idx.split_at(n_train);
    Ok((data.select(train), data.select(test)))
}

/// Write `<stem>.csv` and the `<stem>.json` sidecar recording the scenario.
pub fn write_with_sidecar(data: &Dataset, spec: &ScenarioSpec, dir: &Path, stem: &str) -> Result<()> {
    data.write_csv(&dir.join(format!("{stem}.csv")))?;
    crate::io::write_json(&dir.join(format!("{stem}.json")), spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(rule: LabelRule) -> ScenarioSpec {
        ScenarioSpec {
            n_rows: 400,
            label_rule: rule,
            seed: 3,
            ..ScenarioSpec::default()
        }
    }

    #[test]
    fn perfect_channel_observes_truth() {
        let spec = ScenarioSpec {
            sensitivity: 1.0,
            specificity: 1.0,
            ..small(LabelRule::Linear)
        };
        let ds = generate(&spec).unwrap();
        assert_eq!(Some(&ds.features), ds.true_features.as_ref());
    }

    #[test]
    fn corruption_only_touches_noisy_columns() {
        for rule in [LabelRule::Linear, LabelRule::XorInteraction, LabelRule::ThresholdMixture] {
            let ds = generate(&small(rule)).unwrap();
            let t = ds.true_features.as_ref().unwrap();
            for r in 0..ds.len() {
                for j in 0..ds.n_features() {
                    if j != 6 {
                        assert_eq!(ds.features.get(r, j).to_bits(), t.get(r, j).to_bits());
                    }
                }
            }
            assert!((0..ds.len()).any(|r| ds.features.get(r, 6) != t.get(r, 6)));
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate(&small(LabelRule::XorInteraction)).unwrap();
        let b = generate(&small(LabelRule::XorInteraction)).unwrap();
        assert_eq!(a, b);
        let c = generate(&ScenarioSpec { seed: 4, ..small(LabelRule::XorInteraction) }).unwrap();
        assert_ne!(a, c);
    }

    fn channel_rates(ds: &Dataset, col: usize) -> ((usize, usize), (usize, usize)) {
        let t = ds.true_features.as_ref().unwrap();
        let (mut pos, mut tp, mut neg, mut tn) = (0, 0, 0, 0);
        for r in 0..ds.len() {
            let (o, v) = (ds.features.get(r, col), t.get(r, col));
            if v == 1.0 {
                pos += 1;
                tp += usize::from(o == 1.0);
            } else {
                neg += 1;
                tn += usize::from(o == 0.0);
            }
        }
        ((tp, pos), (tn, neg))
    }

    #[test]
    fn channel_hits_sensitivity_on_ten_thousand_positives() {
        let spec = ScenarioSpec {
            n_rows: 30_000,
            ..small(LabelRule::Linear)
        };
        let ds = generate(&spec).unwrap();
        let ((tp, pos), _) = channel_rates(&ds, 6);
        assert!(pos >= 10_000, "{pos}");
        let rate = tp as f64 / pos as f64;
        assert!((rate - 0.64).abs() <= 0.02, "{rate}");
    }

    #[test]
    fn channel_rates_within_three_standard_errors() {
        for (sens, spec_, seed_) in [(0.64, 0.98, 1), (0.9, 0.7, 2), (0.5, 0.5, 3)] {
            let spec = ScenarioSpec {
                n_rows: 40_000,
                sensitivity: sens,
                specificity: spec_,
                noisy_prevalence: 0.5,
                seed: seed_,
                ..small(LabelRule::Linear)
            };
            let ds = generate(&spec).unwrap();
            let ((tp, pos), (tn, neg)) = channel_rates(&ds, 6);
            assert!(pos >= 10_000 && neg >= 10_000);
            for (hits, n, p) in [(tp, pos, sens), (tn, neg, spec_)] {
                let se = (p * (1.0 - p) / n as f64).sqrt();
                let rate = hits as f64 / n as f64;
                assert!((rate - p).abs() <= 3.0 * se, "{rate} vs {p}");
            }
        }
    }

    #[test]
    fn labels_follow_rule_without_noise() {
        let spec = ScenarioSpec {
            label_noise: 0.0,
            ..small(LabelRule::XorInteraction)
        };
        let ds = generate(&spec).unwrap();
        let t = ds.true_features.as_ref().unwrap();
        for r in 0..ds.len() {
            let want = (t.get(r, 0) > 0.0) ^ (t.get(r, 6) == 1.0);
            assert_eq!(ds.labels[r], u8::from(want));
        }
    }

    #[test]
    fn mixture_decisive_share() {
        let spec = ScenarioSpec {
            n_rows: 20_000,
            label_noise: 0.0,
            ..small(LabelRule::ThresholdMixture)
        };
        let ds = generate(&spec).unwrap();
        let t = ds.true_features.as_ref().unwrap();
        let gate = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.7);
        let decisive: Vec<usize> = (0..ds.len()).filter(|&r| t.get(r, 0) > gate).collect();
        let share = decisive.len() as f64 / ds.len() as f64;
        assert!((share - 0.3).abs() < 0.015, "{share}");
        assert!(decisive.iter().all(|&r| f64::from(ds.labels[r]) == t.get(r, 6)));
    }

    #[test]
    fn rejects_invalid_specs() {
        for bad in [
            ScenarioSpec { noisy_feature_indices: vec![9], ..ScenarioSpec::default() },
            ScenarioSpec { label_noise: 0.5, ..ScenarioSpec::default() },
            ScenarioSpec { noisy_feature_indices: vec![], ..ScenarioSpec::default() },
            ScenarioSpec { sensitivity: 0.0, ..ScenarioSpec::default() },
        ] {
            assert!(generate(&bad).is_err());
        }
    }

    #[test]
    fn split_partitions_rows() {
        let ds = generate(&ScenarioSpec { n_rows: 10, ..small(LabelRule::Linear) }).unwrap();
        let (tr, te) = split(&ds, 0.8, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let mut rows: Vec<Vec<u64>> = tr
            .features
            .iter_rows()
            .chain(te.features.iter_rows())
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut orig: Vec<Vec<u64>> = ds.features.iter_rows().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        rows.sort();
        orig.sort();
        assert_eq!(rows, orig);
        assert_eq!(split(&ds, 0.8, 1).unwrap(), (tr, te));
        assert!(split(&ds, 0.05, 1).is_err());
        assert!(split(&ds, 1.0, 1).is_err());
    }

    #[test]
    fn error_model_matches_channel() {
        let spec = ScenarioSpec::default();
        let em = spec.error_model().unwrap();
        let s = &em.specs[0];
        assert_eq!(s.feature_index, 6);
        let want = 0.64 * 0.4 / (0.64 * 0.4 + 0.02 * 0.6);
        assert!((s.probability(1.0, 1.0).unwrap() - want).abs() < 1e-15);
    }
}
