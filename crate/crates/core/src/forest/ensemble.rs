use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::tree::{train_tree_weighted, DecisionTree, Presorted, TreeConfig};
use crate::error::{Error, Result};
use crate::model::{FeatureRow, Variable};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub tree: TreeConfig,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            tree: TreeConfig::default(),
        }
    }
}

/// Bagged CART ensemble with per-split feature subsampling.
///
/// Tree `t` draws its bootstrap sample and feature subsets from a stream
/// seeded by `(seed, t)`. Bootstrap draws pick row positions, so the fitted
/// forest depends on the order of the training rows as well as their content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub n_features_per_split: usize,
    /// Class labels in ascending order; tree leaves count in this order.
    pub classes: Vec<u32>,
    pub feature_names: Vec<String>,
    pub seed: u64,
}

pub fn train_forest(data: &Dataset, config: &ForestConfig, seed: u64) -> Result<ForestModel> {
    let n = data.n_rows();
    if n == 0 {
        return Err(Error::InvalidInput("cannot train a forest on zero rows".into()));
    }
    if config.n_trees == 0 {
        return Err(Error::Config("a forest needs at least one tree".into()));
    }
    let classes = data.classes();
    let (class_idx, n_classes) = data.class_indices();
    let presorted = Presorted::new(data);
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[t as u64]));
            let mut weights = vec![0u32; n];
            for _ in 0..n {
                weights[rng.random_range(0..n)] += 1;
            }
            train_tree_weighted(data, &presorted, &class_idx, n_classes, &weights, &config.tree, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        trees,
        n_features_per_split: config.tree.features_per_split(data.n_features()),
        classes,
        feature_names: data.feature_names().to_vec(),
        seed,
    })
}

impl ForestModel {
    /// Votes per class (in `classes` order) for one feature vector.
    pub fn votes(&self, x: &[f64]) -> Vec<u32> {
        let mut votes = vec![0u32; self.classes.len()];
        for t in &self.trees {
            votes[t.predict_index(x)] += 1;
        }
        votes
    }

    /// Plurality vote over trees. A tie goes to the smallest class label.
    pub fn predict(&self, x: &[f64]) -> u32 {
        let votes = self.votes(x);
        let mut best = 0;
        for (i, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = i;
            }
        }
        self.classes[best]
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Vec<u32> {
        (0..data.n_rows()).map(|i| self.predict(&data.row(i))).collect()
    }
}

/// Predicts the class of an assembled feature row. Every feature the model was
/// trained on must be present in the row.
pub fn predict_class(model: &ForestModel, row: &FeatureRow) -> Result<u32> {
    let x = model
        .feature_names
        .iter()
        .map(|name| {
            let v: Variable = name
                .parse()
                .map_err(|_| Error::MissingFeature(name.clone()))?;
            row.value(v).ok_or_else(|| Error::MissingFeature(name.clone()))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(model.predict(&x))
}
