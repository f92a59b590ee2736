use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureRow, Outcome, Variable};

/// Column-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    feature_names: Vec<String>,
    columns: Vec<Vec<f64>>,
    labels: Vec<u32>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, columns: Vec<Vec<f64>>, labels: Vec<u32>) -> Result<Self> {
        if feature_names.len() != columns.len() {
            return Err(Error::LengthMismatch {
                left: feature_names.len(),
                right: columns.len(),
            });
        }
        if feature_names.is_empty() {
            return Err(Error::InvalidInput("a dataset needs at least one feature".into()));
        }
        for (name, col) in feature_names.iter().zip(&columns) {
            if col.len() != labels.len() {
                return Err(Error::LengthMismatch {
                    left: col.len(),
                    right: labels.len(),
                });
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "feature {name} has a non-finite value at row {i}"
                )));
            }
        }
        Ok(Dataset {
            feature_names,
            columns,
            labels,
        })
    }

    /// Builds a dataset from row-major feature vectors.
    pub fn from_rows(feature_names: Vec<String>, rows: &[Vec<f64>], labels: Vec<u32>) -> Result<Self> {
        let p = feature_names.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::LengthMismatch {
                left: bad.len(),
                right: p,
            });
        }
        let columns = (0..p).map(|f| rows.iter().map(|r| r[f]).collect()).collect();
        Dataset::new(feature_names, columns, labels)
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn column(&self, f: usize) -> &[f64] {
        &self.columns[f]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Distinct labels in ascending order.
    pub fn classes(&self) -> Vec<u32> {
        self.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Each row's position in [`Dataset::classes`], and the number of classes.
    pub fn class_indices(&self) -> (Vec<u32>, usize) {
        let classes = self.classes();
        let idx = self
            .labels
            .iter()
            .map(|l| classes.binary_search(l).expect("label is in classes") as u32)
            .collect();
        (idx, classes.len())
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| indices.iter().map(|&i| c[i]).collect())
                .collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Which variable groups feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSet {
    pub sensors: bool,
    pub controls: bool,
    pub factors: bool,
    pub gps: bool,
}

impl Default for FeatureSet {
    fn default() -> Self {
        FeatureSet {
            sensors: true,
            controls: true,
            factors: true,
            gps: true,
        }
    }
}

impl FeatureSet {
    pub fn with_gps(self, gps: bool) -> Self {
        FeatureSet { gps, ..self }
    }

    pub fn variables(&self) -> Vec<Variable> {
        let mut v = Vec::new();
        if self.sensors {
            v.extend(Variable::SENSORS);
        }
        if self.controls {
            v.extend(Variable::CONTROLS);
        }
        if self.factors {
            v.extend(Variable::FACTORS);
        }
        if self.gps {
            v.extend(Variable::GPS);
        }
        v
    }
}

/// Feature vector of one row in the order of `variables`.
pub fn feature_vector(row: &FeatureRow, variables: &[Variable]) -> Result<Vec<f64>> {
    variables
        .iter()
        .map(|v| {
            row.value(*v)
                .ok_or_else(|| Error::MissingFeature(v.key().to_string()))
        })
        .collect()
}

/// Classifier dataset for `outcome` over `variables`. Rows missing any of the
/// variables are left out; their count is returned alongside.
pub fn dataset_from_rows(
    rows: &[FeatureRow],
    outcome: Outcome,
    variables: &[Variable],
) -> Result<(Dataset, usize)> {
    let mut features = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    let mut excluded = 0;
    for r in rows {
        match feature_vector(r, variables) {
            Ok(x) => {
                features.push(x);
                labels.push(outcome.class_of(r));
            }
            Err(_) => excluded += 1,
        }
    }
    if excluded > 0 {
        log::info!(
            "{excluded} rows lack a classifier feature and were left out ({})",
            outcome.key()
        );
    }
    if features.is_empty() {
        return Err(Error::NoAnalyzableRows);
    }
    let names = variables.iter().map(|v| v.key().to_string()).collect();
    Ok((Dataset::from_rows(names, &features, labels)?, excluded))
}
