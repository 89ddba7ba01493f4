//! Datasets, file formats, synthetic generators and the split planner.

mod io;
mod split;
mod synthetic;

pub use io::{load_tabular, save_tabular, TabularFormat, BINARY_MAGIC};
pub use split::{make_splits, ForgetMode, SplitBundle, SplitPlan};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Labeled feature matrix. Rows are samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::Empty("dataset has no rows".into()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Label("num_classes must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Label(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    /// Replaces every feature with `1.0` if positive and `0.0` otherwise.
    pub fn binarized(&self) -> Dataset {
        Dataset {
            features: self.features.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            name: format!("{}-binary", self.name),
        }
    }
}

/// Row-level read access to labeled samples.
///
/// Training and unlearning routines only see data through this trait, so a
/// wrapper can audit which rows an algorithm touches.
pub trait RowSource {
    fn num_rows(&self) -> usize;
    fn num_features(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn gather(&self, rows: &[usize]) -> Result<(Array2<f64>, Vec<usize>)>;
}

impl RowSource for Dataset {
    fn num_rows(&self) -> usize {
        self.len()
    }

    fn num_features(&self) -> usize {
        self.features.ncols()
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn gather(&self, rows: &[usize]) -> Result<(Array2<f64>, Vec<usize>)> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.len()) {
            return Err(Error::Shape(format!(
                "row {bad} out of range for {} rows",
                self.len()
            )));
        }
        Ok((
            self.features.select(Axis(0), rows),
            rows.iter().map(|&r| self.labels[r]).collect(),
        ))
    }
}
