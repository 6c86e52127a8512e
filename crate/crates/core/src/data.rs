//! Tabular datasets: observed features, optional ground-truth copies, and
//! binary labels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Prefix marking the ground-truth copy of a column in CSV files.
pub const TRUE_PREFIX: &str = "true__";
pub const LABEL_COLUMN: &str = "label";

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    /// Takes only the values 0 and 1.
    pub binary: bool,
}

/// N rows of P observed features with binary labels. Synthetic data also
/// carries the ground-truth feature values the observations were made from.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub columns: Vec<Column>,
    pub features: Matrix,
    pub true_features: Option<Matrix>,
    pub labels: Vec<u8>,
}

impl Dataset {
    /// Dataset without ground truth; columns are named `x0`, `x1`, ...
    pub fn new(features: Matrix, labels: Vec<u8>) -> Result<Self> {
        let columns = (0..features.cols())
            .map(|j| Column {
                name: format!("x{j}"),
                binary: features.iter_rows().all(|r| r[j] == 0.0 || r[j] == 1.0),
            })
            .collect();
        let ds = Dataset {
            columns,
            features,
            true_features: None,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.features.rows() {
            return Err(Error::Dimension {
                expected: self.features.rows(),
                got: self.labels.len(),
            });
        }
        if self.columns.len() != self.features.cols() {
            return Err(Error::Dimension {
                expected: self.features.cols(),
                got: self.columns.len(),
            });
        }
        if let Some(t) = &self.true_features {
            if t.rows() != self.features.rows() || t.cols() != self.features.cols() {
                return Err(Error::Data(
                    "true_features shape differs from features".into(),
                ));
            }
            ensure_finite(t.as_slice(), "true features")?;
        }
        if self.labels.iter().any(|&y| y > 1) {
            return Err(Error::Data("labels must be 0 or 1".into()));
        }
        ensure_finite(self.features.as_slice(), "features")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    /// Counts of label 0 and label 1.
    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&y| y == 1).count();
        [self.labels.len() - ones, ones]
    }

    /// The same rows with the ground-truth values as features. Models are
    /// trained on this view, since true values are known at training time.
    /// Datasets without ground truth are returned unchanged.
    pub fn truth_view(&self) -> Dataset {
        match &self.true_features {
            Some(t) => Dataset {
                columns: self.columns.clone(),
                features: t.clone(),
                true_features: Some(t.clone()),
                labels: self.labels.clone(),
            },
            None => self.clone(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            columns: self.columns.clone(),
            features: self.features.select_rows(idx),
            true_features: self.true_features.as_ref().map(|t| t.select_rows(idx)),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Write as CSV: observed columns, then `true__` copies, then `label`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut header: Vec<String> = self.columns.iter().map(|c| c.name.clone()).collect();
        if self.true_features.is_some() {
            header.extend(self.columns.iter().map(|c| format!("{TRUE_PREFIX}{}", c.name)));
        }
        header.push(LABEL_COLUMN.to_string());
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            if let Some(t) = &self.true_features {
                rec.extend(t.row(i).iter().map(|v| v.to_string()));
            }
            rec.push(self.labels[i].to_string());
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let header: Vec<String> = r
            .headers()
            .map_err(|e| Error::csv(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let label_col = header
            .iter()
            .position(|h| h == LABEL_COLUMN)
            .ok_or_else(|| Error::Data(format!("{}: no `{LABEL_COLUMN}` column", path.display())))?;
        let observed: Vec<usize> = (0..header.len())
            .filter(|&j| j != label_col && !header[j].starts_with(TRUE_PREFIX))
            .collect();
        let truth: Vec<Option<usize>> = observed
            .iter()
            .map(|&j| {
                let want = format!("{TRUE_PREFIX}{}", header[j]);
                header.iter().position(|h| *h == want)
            })
            .collect();
        let has_truth = truth.iter().any(Option::is_some);
        if has_truth && truth.iter().any(Option::is_none) {
            return Err(Error::Data(format!(
                "{}: ground-truth columns present for only some features",
                path.display()
            )));
        }

        let mut feats = Vec::new();
        let mut trues = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let parse = |j: usize| -> Result<f64> {
                rec[j].trim().parse::<f64>().map_err(|_| {
                    Error::Data(format!(
                        "{}: row {}, column `{}`: cannot parse {:?}",
                        path.display(),
                        line + 1,
                        header[j],
                        &rec[j]
                    ))
                })
            };
            for &j in &observed {
                feats.push(parse(j)?);
            }
            for j in truth.iter().flatten() {
                trues.push(parse(*j)?);
            }
            let y = parse(label_col)?;
            if y != 0.0 && y != 1.0 {
                return Err(Error::Data(format!(
                    "{}: row {}: label {y} is not 0 or 1",
                    path.display(),
                    line + 1
                )));
            }
            labels.push(y as u8);
        }
        let n = labels.len();
        let p = observed.len();
        let features = Matrix::from_vec(n, p, feats)?;
        let true_features = if has_truth {
            Some(Matrix::from_vec(n, p, trues)?)
        } else {
            None
        };
        let columns = observed
            .iter()
            .enumerate()
            .map(|(k, &j)| Column {
                name: header[j].clone(),
                binary: features.iter_rows().all(|r| r[k] == 0.0 || r[k] == 1.0),
            })
            .collect();
        let ds = Dataset {
            columns,
            features,
            true_features,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let f = Matrix::from_rows(&[[0.1, 1.0], [-2.5, 0.0], [1.0 / 3.0, 1.0]]).unwrap();
        let mut ds = Dataset::new(f.clone(), vec![1, 0, 1]).unwrap();
        let mut t = f;
        t.set(1, 1, 1.0);
        ds.true_features = Some(t);
        ds
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let ds = sample();
        ds.write_csv(&p).unwrap();
        let back = Dataset::read_csv(&p).unwrap();
        assert_eq!(back.features, ds.features);
        assert_eq!(back.true_features, ds.true_features);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.columns[1].name, "x1");
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("x0,x1,true__x0,true__x1,label\n"));
    }

    #[test]
    fn rejects_bad_labels() {
        let f = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        assert!(Dataset::new(f, vec![0, 2]).is_err());
    }

    #[test]
    fn truth_view_swaps_features() {
        let ds = sample();
        let tv = ds.truth_view();
        assert_eq!(tv.features.get(1, 1), 1.0);
        assert_eq!(ds.features.get(1, 1), 0.0);
    }
}
