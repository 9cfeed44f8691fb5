//! Per-true-label mean softmax mass, the statistic that drives clustering.
//!
//! Row `l` of an `AffinityMatrix` is the arithmetic mean of the softmax
//! outputs over every example whose true label is `l`. Off-diagonal mass
//! measures how confusable two labels are to the current model.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// C x C row-stochastic matrix of mean predicted probability per true label.
///
/// Rows whose label never appeared in the data are flagged empty (count 0)
/// rather than silently kept at zero.
#[derive(Debug, Clone)]
pub struct AffinityMatrix {
    mass: Matrix,
    counts: Vec<usize>,
}

impl AffinityMatrix {
    pub fn from_parts(mass: Matrix, counts: Vec<usize>) -> Result<Self> {
        if mass.rows() != mass.cols() {
            return Err(Error::Dim(format!(
                "affinity matrix must be square, got {}x{}",
                mass.rows(),
                mass.cols()
            )));
        }
        if counts.len() != mass.rows() {
            return Err(Error::Dim(format!(
                "{} counts for {} labels",
                counts.len(),
                mass.rows()
            )));
        }
        let a = AffinityMatrix { mass, counts };
        a.validate()?;
        Ok(a)
    }

    pub fn size(&self) -> usize {
        self.mass.rows()
    }

    pub fn mass(&self) -> &Matrix {
        &self.mass
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn row(&self, label: usize) -> &[f64] {
        self.mass.row(label)
    }

    pub fn is_empty_row(&self, label: usize) -> bool {
        self.counts[label] == 0
    }

    /// Checks row-stochasticity of non-empty rows (1e-9) and entry range.
    pub fn validate(&self) -> Result<()> {
        for l in 0..self.size() {
            let row = self.mass.row(l);
            if self.counts[l] == 0 {
                if row.iter().any(|&v| v != 0.0) {
                    return Err(Error::Input(format!(
                        "empty row {l} carries nonzero mass"
                    )));
                }
                continue;
            }
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Input(format!("row {l} has mass outside [0,1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() >= 1e-9 {
                return Err(Error::Input(format!(
                    "row {l} sums to {sum}, expected 1 within 1e-9"
                )));
            }
        }
        Ok(())
    }

    /// L1 distance between two non-empty rows; lands in [0, 2].
    pub fn row_l1(&self, p: usize, q: usize) -> Result<f64> {
        if p >= self.size() || q >= self.size() {
            return Err(Error::Label(format!(
                "labels ({p},{q}) out of range for {} labels",
                self.size()
            )));
        }
        if self.is_empty_row(p) || self.is_empty_row(q) {
            return Err(Error::Empty(format!(
                "cannot take row distance involving an empty row ({p},{q})"
            )));
        }
        Ok(self
            .row(p)
            .iter()
            .zip(self.row(q))
            .map(|(a, b)| (a - b).abs())
            .sum())
    }

    /// CSV form: C rows of C comma-separated decimals, 17 significant digits.
    /// Empty rows serialize as exact zeros.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for l in 0..self.size() {
            let cells: Vec<String> = self.row(l).iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|cell| {
                    cell.trim().parse::<f64>().map_err(|_| {
                        Error::parse(format!("line {}", i + 1), format!("bad number `{cell}`"))
                    })
                })
                .collect::<Result<_>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Empty("affinity CSV has no rows".into()));
        }
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::parse(
                "csv",
                format!("expected a square {size}x{size} matrix"),
            ));
        }

        let mut counts = vec![0usize; size];
        for (l, row) in rows.iter().enumerate() {
            if row.iter().all(|&v| v == 0.0) {
                continue; // flagged empty
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() >= 1e-6 {
                return Err(Error::Input(format!(
                    "csv row {} sums to {sum}, expected 1 within 1e-6",
                    l + 1
                )));
            }
            counts[l] = 1;
        }
        let mass = Matrix::from_rows(&rows)?;
        // CSV rows may round to 1 +/- a few ulps times C; renormalization is
        // not applied, so tolerate parse-level slack by validating manually.
        let a = AffinityMatrix { mass, counts };
        for l in 0..a.size() {
            if a.counts[l] > 0 && a.row(l).iter().any(|&v| !(-1e-12..=1.0 + 1e-12).contains(&v)) {
                return Err(Error::Input(format!("csv row {} has mass outside [0,1]", l + 1)));
            }
        }
        Ok(a)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }
}

/// Accumulates mean softmax mass per true label over a dataset.
///
/// `predict` maps a batch of feature rows to softmax rows; every returned
/// row must have length `num_labels` and sum to 1 within 1e-6. Summation is
/// Kahan-compensated per cell so the result does not depend on example
/// order beyond a couple of ulps.
pub fn accumulate_affinity<F>(
    mut predict: F,
    features: &Matrix,
    labels: &[usize],
    num_labels: usize,
) -> Result<AffinityMatrix>
where
    F: FnMut(&Matrix) -> Result<Matrix>,
{
    let n = features.rows();
    if n == 0 {
        return Err(Error::Empty("cannot accumulate affinity over an empty dataset".into()));
    }
    if labels.len() != n {
        return Err(Error::Dim(format!("{} labels for {n} examples", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_labels) {
        return Err(Error::Label(format!(
            "label {bad} out of range for {num_labels} labels"
        )));
    }

    let mut sums = Matrix::zeros(num_labels, num_labels);
    let mut compensation = Matrix::zeros(num_labels, num_labels);
    let mut counts = vec![0usize; num_labels];

    const CHUNK: usize = 256;
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let batch = features.select_rows(&idx);
        let probs = predict(&batch)?;
        if probs.rows() != batch.rows() || probs.cols() != num_labels {
            return Err(Error::Input(format!(
                "predictor returned {}x{}, expected {}x{num_labels}",
                probs.rows(),
                probs.cols(),
                batch.rows()
            )));
        }
        for (b, &example) in idx.iter().enumerate() {
            let row = probs.row(b);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() >= 1e-6 {
                return Err(Error::Input(format!(
                    "prediction for example {example} sums to {sum}, expected 1 within 1e-6"
                )));
            }
            let label = labels[example];
            counts[label] += 1;
            let target = sums.row_mut(label);
            let comp = compensation.row_mut(label);
            for i in 0..num_labels {
                // Kahan step.
                let y = row[i] - comp[i];
                let t = target[i] + y;
                comp[i] = (t - target[i]) - y;
                target[i] = t;
            }
        }
        start = end;
    }

    let mut mass = Matrix::zeros(num_labels, num_labels);
    for l in 0..num_labels {
        if counts[l] == 0 {
            continue;
        }
        let inv = 1.0 / counts[l] as f64;
        for i in 0..num_labels {
            mass.set(l, i, sums.get(l, i) * inv);
        }
    }
    AffinityMatrix::from_parts(mass, counts)
}
