//! Test-set analysis: accuracy, misclassification coverage curves, the
//! EIV/non-EIV scatter table, and the flip report.
//!
//! "Misclassified" always refers to the non-EIV predicted class.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uq::QueryRecord;

pub const DEFAULT_PROXIMITY_BAND: f64 = 0.2;
pub const DEFAULT_THRESHOLD_COUNT: usize = 51;

/// `n` evenly spaced thresholds from 0 to 0.5 inclusive.
pub fn threshold_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| 0.5 * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn default_thresholds() -> Vec<f64> {
    threshold_grid(DEFAULT_THRESHOLD_COUNT)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { expected: a, got: b });
    }
    if a == 0 {
        return Err(Error::Data("empty prediction list".into()));
    }
    Ok(())
}

pub fn accuracy(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    check_lengths(predictions.len(), labels.len())?;
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn misclassified_mask(predictions: &[u8], labels: &[u8]) -> Result<Vec<bool>> {
    check_lengths(predictions.len(), labels.len())?;
    Ok(predictions.iter().zip(labels).map(|(p, l)| p != l).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    pub thresholds: Vec<f64>,
    pub proportions: Vec<f64>,
    pub method_tag: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub method: String,
    pub threshold: f64,
    pub proportion: f64,
}

impl CoverageCurve {
    /// Trapezoid area under the curve over its threshold range.
    pub fn area(&self) -> f64 {
        self.thresholds
            .windows(2)
            .zip(self.proportions.windows(2))
            .map(|(t, p)| 0.5 * (t[1] - t[0]) * (p[0] + p[1]))
            .sum()
    }

    pub fn rows(&self) -> Vec<CurveRow> {
        self.thresholds
            .iter()
            .zip(&self.proportions)
            .map(|(&threshold, &proportion)| CurveRow {
                method: self.method_tag.clone(),
                threshold,
                proportion,
            })
            .collect()
    }
}

/// Share of misclassified queries whose uncertainty is strictly above each
/// threshold.
pub fn coverage_curve(
    uncertainties: &[f64],
    misclassified: &[bool],
    thresholds: &[f64],
    method_tag: &str,
) -> Result<CoverageCurve> {
    check_lengths(uncertainties.len(), misclassified.len())?;
    if thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("coverage thresholds must be ascending".into()));
    }
    crate::error::ensure_finite(uncertainties, "uncertainties")?;
    let wrong: Vec<f64> = uncertainties
        .iter()
        .zip(misclassified)
        .filter(|(_, &m)| m)
        .map(|(&u, _)| u)
        .collect();
    if wrong.is_empty() {
        return Err(Error::NoMisclassifications);
    }
    let proportions = thresholds
        .iter()
        .map(|&tau| wrong.iter().filter(|&&u| u > tau).count() as f64 / wrong.len() as f64)
        .collect();
    Ok(CoverageCurve {
        thresholds: thresholds.to_vec(),
        proportions,
        method_tag: method_tag.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub query_id: usize,
    pub u_eiv: f64,
    pub u_noneiv: f64,
    pub class_eiv: u8,
    pub class_noneiv: u8,
    pub true_label: u8,
    /// `|u_eiv - u_noneiv|`.
    pub distance: f64,
}

pub fn scatter_table(records: &[QueryRecord]) -> Result<Vec<ScatterRow>> {
    if records.is_empty() {
        return Err(Error::Data("scatter table needs at least one query".into()));
    }
    Ok(records
        .iter()
        .map(|r| ScatterRow {
            query_id: r.query_id,
            u_eiv: r.u_eiv,
            u_noneiv: r.u_noneiv,
            class_eiv: r.class_eiv,
            class_noneiv: r.class_noneiv,
            true_label: r.true_label,
            distance: (r.u_eiv - r.u_noneiv).abs(),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipRow {
    pub query_id: usize,
    pub u_eiv: f64,
    pub u_noneiv: f64,
    pub flip: bool,
    pub correct_noneiv: bool,
    pub proximal: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadrantCounts {
    pub flip_correct: usize,
    pub flip_misclassified: usize,
    pub stable_correct: usize,
    pub stable_misclassified: usize,
}

impl QuadrantCounts {
    pub fn total(&self) -> usize {
        self.flip_correct + self.flip_misclassified + self.stable_correct + self.stable_misclassified
    }

    pub fn flips(&self) -> usize {
        self.flip_correct + self.flip_misclassified
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    pub rows: Vec<FlipRow>,
    pub proximity_band: f64,
    pub counts: QuadrantCounts,
    pub proximal: usize,
}

/// Split queries by flip and by non-EIV correctness; rows within
/// `proximity_band` of the identity line are tagged proximal.
pub fn flip_report(records: &[QueryRecord], proximity_band: f64) -> Result<FlipReport> {
    if records.is_empty() {
        return Err(Error::Data("flip report needs at least one query".into()));
    }
    if proximity_band.is_nan() || proximity_band < 0.0 {
        return Err(Error::Config(format!("proximity band {proximity_band} must be >= 0")));
    }
    let mut counts = QuadrantCounts::default();
    let rows: Vec<FlipRow> = records
        .iter()
        .map(|r| {
            let correct_noneiv = r.class_noneiv == r.true_label;
            match (r.flip, correct_noneiv) {
                (true, true) => counts.flip_correct += 1,
                (true, false) => counts.flip_misclassified += 1,
                (false, true) => counts.stable_correct += 1,
                (false, false) => counts.stable_misclassified += 1,
            }
            FlipRow {
                query_id: r.query_id,
                u_eiv: r.u_eiv,
                u_noneiv: r.u_noneiv,
                flip: r.flip,
                correct_noneiv,
                proximal: (r.u_eiv - r.u_noneiv).abs() <= proximity_band,
            }
        })
        .collect();
    let proximal = rows.iter().filter(|r| r.proximal).count();
    Ok(FlipReport {
        rows,
        proximity_band,
        counts,
        proximal,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub method: String,
    pub area: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_queries: usize,
    pub accuracy_noneiv: f64,
    pub accuracy_eiv: f64,
    pub accuracy_mc_dropout: Option<f64>,
    pub flips: QuadrantCounts,
    pub proximity_band: f64,
    pub proximal: usize,
    pub mean_taylor_gap: f64,
    pub max_taylor_gap: f64,
    pub curves: Vec<CurveSummary>,
}

pub fn summarize(
    records: &[QueryRecord],
    report: &FlipReport,
    curves: &[CoverageCurve],
    accuracy_mc_dropout: Option<f64>,
) -> Result<Summary> {
    let labels: Vec<u8> = records.iter().map(|r| r.true_label).collect();
    let noneiv: Vec<u8> = records.iter().map(|r| r.class_noneiv).collect();
    let eiv: Vec<u8> = records.iter().map(|r| r.class_eiv).collect();
    let gaps = records.iter().map(|r| r.taylor_gap);
    Ok(Summary {
        n_queries: records.len(),
        accuracy_noneiv: accuracy(&noneiv, &labels)?,
        accuracy_eiv: accuracy(&eiv, &labels)?,
        accuracy_mc_dropout,
        flips: report.counts,
        proximity_band: report.proximity_band,
        proximal: report.proximal,
        mean_taylor_gap: gaps.clone().sum::<f64>() / records.len() as f64,
        max_taylor_gap: gaps.fold(0.0, f64::max),
        curves: curves
            .iter()
            .map(|c| CurveSummary {
                method: c.method_tag.clone(),
                area: c.area(),
            })
            .collect(),
    })
}

pub fn write_curves_csv(path: &Path, curves: &[CoverageCurve]) -> Result<()> {
    let rows: Vec<CurveRow> = curves.iter().flat_map(CoverageCurve::rows).collect();
    crate::io::write_csv(path, &rows)
}

pub fn write_scatter_csv(path: &Path, rows: &[ScatterRow]) -> Result<()> {
    crate::io::write_csv(path, rows)
}

pub fn write_flip_csv(path: &Path, report: &FlipReport) -> Result<()> {
    crate::io::write_csv(path, &report.rows)
}
