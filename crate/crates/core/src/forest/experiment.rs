use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{dataset_from_rows, Dataset, FeatureSet};
use super::ensemble::{train_forest, ForestConfig};
use super::metrics::ConfusionMatrix;
use crate::error::{Error, Result};
use crate::model::{FeatureRow, Outcome};
use crate::seed::derive_seed;

/// Fewest rows each class must have before an experiment runs.
pub const MIN_ROWS_PER_CLASS: usize = 10;

const MAX_REDRAWS_PER_REPLICATE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub replicates: usize,
    pub test_fraction: f64,
    /// Split each class separately instead of the whole sample.
    pub stratified: bool,
    pub forest: ForestConfig,
    pub features: FeatureSet,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            replicates: 100,
            test_fraction: 0.3,
            stratified: false,
            forest: ForestConfig::default(),
            features: FeatureSet::default(),
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be positive".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie strictly between 0 and 1".into()));
        }
        if self.forest.n_trees == 0 {
            return Err(Error::Config("n_trees must be positive".into()));
        }
        let f = self.features;
        if !(f.sensors || f.controls || f.factors || f.gps) {
            return Err(Error::Config("no feature family selected".into()));
        }
        Ok(())
    }
}

/// Per-replicate test metrics of the hold-out protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateScores {
    pub accuracies: Vec<f64>,
    pub kappas: Vec<f64>,
    /// Replicates whose kappa hit the `p_e = 1` case.
    pub degenerate_kappas: usize,
    /// Splits thrown away because training lacked a class.
    pub redraws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub outcome: Outcome,
    pub include_gps: bool,
    pub features: Vec<String>,
    pub n_rows: usize,
    /// Rows dropped for missing a feature.
    pub n_excluded: usize,
    pub accuracies: Vec<f64>,
    pub kappas: Vec<f64>,
    pub mean_accuracy: f64,
    pub mean_kappa: f64,
    pub degenerate_kappas: usize,
    pub redraws: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn split_indices(
    labels: &[u32],
    classes: &[u32],
    fraction: f64,
    stratified: bool,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let take = |n: usize| ((fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let (mut test, mut train) = (Vec::new(), Vec::new());
    if stratified {
        for &c in classes {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            idx.shuffle(rng);
            let k = take(idx.len());
            test.extend_from_slice(&idx[..k]);
            train.extend_from_slice(&idx[k..]);
        }
    } else {
        let mut idx: Vec<usize> = (0..labels.len()).collect();
        idx.shuffle(rng);
        let k = take(idx.len());
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    // Keep the training rows in dataset order so the forest sees a
    // reproducible layout regardless of the shuffle.
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Repeated random hold-out evaluation of a forest on a prepared dataset.
///
/// Replicate `r` draws its split and forest seed from a stream keyed by
/// `(seed, r)`, so results do not depend on thread scheduling.
pub fn evaluate_dataset(data: &Dataset, config: &EvaluationConfig, seed: u64) -> Result<ReplicateScores> {
    config.validate()?;
    let classes = data.classes();
    for &c in &classes {
        let n = data.labels().iter().filter(|&&l| l == c).count();
        if n < MIN_ROWS_PER_CLASS {
            return Err(Error::InvalidInput(format!(
                "class {c} has {n} rows; at least {MIN_ROWS_PER_CLASS} are needed"
            )));
        }
    }
    let results = (0..config.replicates)
        .into_par_iter()
        .map(|r| -> Result<(f64, f64, bool, usize)> {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[r as u64]));
            let mut redraws = 0;
            let (train, test) = loop {
                let (train, test) =
                    split_indices(data.labels(), &classes, config.test_fraction, config.stratified, &mut rng);
                let complete = classes.iter().all(|c| train.iter().any(|&i| data.labels()[i] == *c));
                if complete {
                    break (train, test);
                }
                redraws += 1;
                log::warn!("replicate {r}: training split lacks a class, redrawing");
                if redraws > MAX_REDRAWS_PER_REPLICATE {
                    return Err(Error::InvalidInput(format!(
                        "replicate {r} could not draw a training split containing every class"
                    )));
                }
            };
            let train_set = data.subset(&train);
            let test_set = data.subset(&test);
            let forest = train_forest(&train_set, &config.forest, rng.random())?;
            let predicted = forest.predict_dataset(&test_set);
            let m = ConfusionMatrix::from_pairs(classes.clone(), test_set.labels(), &predicted)?;
            let kappa = m.kappa()?;
            Ok((m.accuracy()?, kappa.value, kappa.degenerate, redraws))
        })
        .collect::<Result<Vec<_>>>()?;

    let redraws = results.iter().map(|r| r.3).sum();
    if redraws > 0 {
        log::info!("{redraws} split(s) redrawn across {} replicates", config.replicates);
    }
    Ok(ReplicateScores {
        accuracies: results.iter().map(|r| r.0).collect(),
        kappas: results.iter().map(|r| r.1).collect(),
        degenerate_kappas: results.iter().filter(|r| r.2).count(),
        redraws,
    })
}

/// Replicated 70/30 evaluation for one outcome using the features selected in
/// `config.features`.
pub fn replicated_evaluation(
    rows: &[FeatureRow],
    outcome: Outcome,
    config: &EvaluationConfig,
    seed: u64,
) -> Result<ExperimentReport> {
    config.validate()?;
    let variables = config.features.variables();
    let (data, n_excluded) = dataset_from_rows(rows, outcome, &variables)?;
    let scores = evaluate_dataset(&data, config, seed)?;
    Ok(ExperimentReport {
        outcome,
        include_gps: config.features.gps,
        features: data.feature_names().to_vec(),
        n_rows: data.n_rows(),
        n_excluded,
        mean_accuracy: mean(&scores.accuracies),
        mean_kappa: mean(&scores.kappas),
        accuracies: scores.accuracies,
        kappas: scores.kappas,
        degenerate_kappas: scores.degenerate_kappas,
        redraws: scores.redraws,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub outcome: Outcome,
    pub with_gps: ExperimentReport,
    pub without_gps: ExperimentReport,
}

impl AblationEntry {
    pub fn accuracy_gap(&self) -> f64 {
        self.with_gps.mean_accuracy - self.without_gps.mean_accuracy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// Rows with a GPS fix, shared by both conditions.
    pub n_rows: usize,
    pub entries: Vec<AblationEntry>,
}

/// Runs the evaluation for every outcome with and without the location
/// features. Both conditions use the same GPS-bearing rows and the same
/// replicate splits, so the gap measures the location features alone.
pub fn gps_ablation(rows: &[FeatureRow], config: &EvaluationConfig, seed: u64) -> Result<AblationReport> {
    let located: Vec<FeatureRow> = rows.iter().filter(|r| r.gps.is_some()).cloned().collect();
    if located.is_empty() {
        return Err(Error::InvalidInput("the GPS ablation needs rows with a GPS fix".into()));
    }
    let with = EvaluationConfig {
        features: config.features.with_gps(true),
        ..*config
    };
    let without = EvaluationConfig {
        features: config.features.with_gps(false),
        ..*config
    };
    let entries = Outcome::ALL
        .iter()
        .enumerate()
        .map(|(i, &outcome)| {
            let s = derive_seed(seed, &[i as u64]);
            Ok(AblationEntry {
                outcome,
                with_gps: replicated_evaluation(&located, outcome, &with, s)?,
                without_gps: replicated_evaluation(&located, outcome, &without, s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport {
        n_rows: located.len(),
        entries,
    })
}
