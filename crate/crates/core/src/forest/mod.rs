//! Random-forest classification of mood outcomes with replicated hold-out
//! evaluation and a location-feature ablation.

mod data;
mod ensemble;
mod experiment;
mod metrics;
mod tree;

pub use data::{dataset_from_rows, feature_vector, Dataset, FeatureSet};
pub use ensemble::{predict_class, train_forest, ForestConfig, ForestModel};
pub use experiment::{
    evaluate_dataset, gps_ablation, replicated_evaluation, AblationEntry, AblationReport,
    EvaluationConfig, ExperimentReport, ReplicateScores, MIN_ROWS_PER_CLASS,
};
pub use metrics::{cohen_kappa, gini_impurity, split_impurity, ConfusionMatrix, Kappa};
pub use tree::{best_split, train_tree, train_tree_weighted, BestSplit, DecisionTree, Node, Presorted, TreeConfig};
