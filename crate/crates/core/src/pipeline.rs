//! End-to-end runs from a store snapshot to rendered reports.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::corr::correlation_table;
use crate::error::{Error, Result};
use crate::forest::{gps_ablation, EvaluationConfig};
use crate::glmm::{model_suite, FitConfig};
use crate::model::{
    assemble_feature_rows, clean_observations, FeatureRow, HolidayCalendar, Outcome, Variable,
    DEFAULT_JOIN_WINDOW_MINUTES, DEFAULT_MIN_BPM,
};
use crate::report::{render_correlations, render_forest, render_glmm, Report};
use crate::store::{Snapshot, Store};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub min_bpm: f64,
    pub join_window_minutes: i64,
    pub holidays: Vec<NaiveDate>,
    pub glmm: FitConfig,
    pub forest: EvaluationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            min_bpm: DEFAULT_MIN_BPM,
            join_window_minutes: DEFAULT_JOIN_WINDOW_MINUTES,
            holidays: HolidayCalendar::winter_2016().dates.into_iter().collect(),
            glmm: FitConfig::default(),
            forest: EvaluationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.min_bpm.is_finite() || self.min_bpm < 0.0 {
            return Err(Error::Config(format!("min_bpm must be a non-negative number, got {}", self.min_bpm)));
        }
        if self.join_window_minutes <= 0 {
            return Err(Error::Config("join_window_minutes must be positive".into()));
        }
        self.forest.validate()
    }

    pub fn calendar(&self) -> HolidayCalendar {
        HolidayCalendar::new(self.holidays.iter().copied())
    }

    pub fn window(&self) -> Duration {
        Duration::minutes(self.join_window_minutes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Correlations,
    Glmm,
    Forest,
}

impl Analysis {
    pub const ALL: [Analysis; 3] = [Analysis::Correlations, Analysis::Glmm, Analysis::Forest];

    pub fn name(self) -> &'static str {
        match self {
            Analysis::Correlations => "correlations",
            Analysis::Glmm => "glmm",
            Analysis::Forest => "forest",
        }
    }
}

impl fmt::Display for Analysis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Analysis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Analysis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown analysis {s:?}")))
    }
}

/// Cleaned and assembled analysis rows.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub rows: Vec<FeatureRow>,
    /// Observations dropped by the heart-rate floor.
    pub removed: usize,
    /// Responses that could not be turned into a row.
    pub skipped: usize,
}

pub fn prepare(snapshot: &Snapshot, config: &PipelineConfig) -> Result<Prepared> {
    config.validate()?;
    let cleaned = clean_observations(snapshot.observations.clone(), config.min_bpm);
    let assembly = assemble_feature_rows(
        &snapshot.responses,
        &cleaned.kept,
        &snapshot.participants,
        &config.calendar(),
        config.window(),
    );
    if assembly.rows.is_empty() {
        return Err(Error::NoAnalyzableRows);
    }
    Ok(Prepared {
        rows: assembly.rows,
        removed: cleaned.removed,
        skipped: assembly.skipped.len(),
    })
}

pub fn analyze(rows: &[FeatureRow], analysis: Analysis, config: &PipelineConfig, seed: u64) -> Result<Report> {
    if rows.is_empty() {
        return Err(Error::NoAnalyzableRows);
    }
    match analysis {
        Analysis::Correlations => {
            let table = correlation_table(rows, &Variable::CORRELATION_TABLE);
            Ok(render_correlations(&table, rows.len()))
        }
        Analysis::Glmm => {
            let suites = [Outcome::Happiness, Outcome::Activation]
                .into_iter()
                .map(|o| model_suite(rows, o, &config.glmm).map(|s| (o, s)))
                .collect::<Result<Vec<_>>>()?;
            Ok(render_glmm(&suites))
        }
        Analysis::Forest => Ok(render_forest(&gps_ablation(rows, &config.forest, seed)?)),
    }
}

/// Runs one analysis on the store and writes `<name>.txt` and `<name>.csv`
/// into `out_dir`. Returns the two paths.
pub fn run_pipeline(
    store: &Store,
    analysis: Analysis,
    config: &PipelineConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    let prepared = prepare(&store.snapshot(), config)?;
    log::info!(
        "{} analysis rows ({} observations cleaned away, {} responses skipped)",
        prepared.rows.len(),
        prepared.removed,
        prepared.skipped
    );
    let report = analyze(&prepared.rows, analysis, config, seed)?;
    std::fs::create_dir_all(out_dir)?;
    let txt = out_dir.join(format!("{}.txt", analysis.name()));
    let csv = out_dir.join(format!("{}.csv", analysis.name()));
    std::fs::write(&txt, &report.text)?;
    std::fs::write(&csv, &report.csv)?;
    Ok((txt, csv))
}
