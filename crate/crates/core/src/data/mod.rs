//! Datasets, SSL splits, and distribution-shift injection.
//!
//! Features are stored row-major in a [`Matrix`]. Labeled and test data are
//! plain [`Dataset`]s; the unlabeled pool is an [`UnlabeledSet`] whose true
//! labels and OOD flags are kept only for evaluation and reporting.

mod csv_io;
mod generate;
mod shift;
mod split;

pub(crate) use csv_io::{csv_err, writer as csv_writer};
pub use csv_io::{load_csv, load_unlabeled_csv, save_csv, save_unlabeled_csv};
pub use generate::{generate_blobs, generate_two_moons};
pub use shift::{inject_imbalance, inject_ood};
pub use split::{split_ssl, SslSplit};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!("matrix data has {} entries, expected {rows}x{cols}", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("rows have inconsistent lengths"));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Labeled points: features, class ids in `[0, class_count)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

/// The labeled set `D` has the same shape as any other dataset.
pub type LabeledSet = Dataset;

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let ds = Self { features, labels, class_count };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.rows() == 0 || self.features.cols() == 0 {
            return Err(Error::invalid("dataset must have at least one point and one feature"));
        }
        if self.labels.len() != self.features.rows() {
            return Err(Error::invalid("label count does not match row count"));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.class_count) {
            return Err(Error::invalid(format!("label {bad} outside [0, {})", self.class_count)));
        }
        if !self.features.is_finite() {
            return Err(Error::invalid("features contain NaN or infinity"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }
}

/// The unlabeled pool `U`.
///
/// `hidden_labels` and `ood_flags` are evaluation-only annotations; the
/// selection and training code never consult them. An OOD point has no
/// in-distribution label, hence the `Option` per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledSet {
    pub features: Matrix,
    hidden_labels: Option<Vec<Option<usize>>>,
    ood_flags: Option<Vec<bool>>,
}

impl UnlabeledSet {
    pub fn new(
        features: Matrix,
        hidden_labels: Option<Vec<Option<usize>>>,
        ood_flags: Option<Vec<bool>>,
    ) -> Result<Self> {
        let m = features.rows();
        if m == 0 || features.cols() == 0 {
            return Err(Error::invalid("unlabeled set must be non-empty"));
        }
        if !features.is_finite() {
            return Err(Error::invalid("features contain NaN or infinity"));
        }
        if hidden_labels.as_ref().is_some_and(|h| h.len() != m) {
            return Err(Error::invalid("hidden label count does not match row count"));
        }
        if ood_flags.as_ref().is_some_and(|f| f.len() != m) {
            return Err(Error::invalid("ood flag count does not match row count"));
        }
        Ok(Self { features, hidden_labels, ood_flags })
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        Self {
            features: ds.features.clone(),
            hidden_labels: Some(ds.labels.iter().map(|&l| Some(l)).collect()),
            ood_flags: None,
        }
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        self.features.row(j)
    }

    /// Evaluation only.
    pub fn hidden_labels(&self) -> Option<&[Option<usize>]> {
        self.hidden_labels.as_deref()
    }

    /// Evaluation only.
    pub fn ood_flags(&self) -> Option<&[bool]> {
        self.ood_flags.as_deref()
    }

    pub fn ood_count(&self) -> usize {
        self.ood_flags.as_ref().map_or(0, |f| f.iter().filter(|&&b| b).count())
    }
}
