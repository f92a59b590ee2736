//! Shared fixtures for the benchmarks, built from the simulator so the
//! workloads have realistic shapes.

use moodsense::forest::{dataset_from_rows, Dataset, FeatureSet};
use moodsense::glmm::GroupedData;
use moodsense::model::{assemble_feature_rows, clean_observations, FeatureRow, DEFAULT_JOIN_WINDOW_MINUTES, DEFAULT_MIN_BPM};
use moodsense::simulator::{generate_cohort, simulate_panel, CohortConfig, PanelConfig};
use moodsense::Outcome;

/// Assembled analysis rows from a simulated cohort.
pub fn cohort_rows(n_participants: usize, days: usize) -> Vec<FeatureRow> {
    let config = CohortConfig {
        n_participants,
        days,
        seed: 1,
        ..CohortConfig::default()
    };
    let cohort = generate_cohort(&config).expect("valid cohort config");
    let cleaned = clean_observations(cohort.observations, DEFAULT_MIN_BPM);
    assemble_feature_rows(
        &cohort.responses,
        &cleaned.kept,
        &cohort.participants,
        &config.holidays,
        chrono::Duration::minutes(DEFAULT_JOIN_WINDOW_MINUTES),
    )
    .rows
}

pub fn forest_dataset(rows: &[FeatureRow]) -> Dataset {
    dataset_from_rows(rows, Outcome::MoodState, &FeatureSet::default().variables())
        .expect("rows are analyzable")
        .0
}

/// The default 17 × 1,000 panel with three predictors.
pub fn panel() -> GroupedData {
    simulate_panel(&PanelConfig::default(), 1).expect("valid panel").0
}
