//! The work behind each subcommand, separated from argument parsing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{DateTime, Duration, Utc};
use moodsense::ingest::{format_timestamp, ingest_file, Format, IngestReport, RecordKind};
use moodsense::maplayer::{build_map_layer, MapFilter};
use moodsense::model::clean_observations;
use moodsense::pipeline::{prepare, run_pipeline, Analysis, PipelineConfig};
use moodsense::simulator::{export_cohort, generate_cohort, CohortConfig};
use moodsense::store::Store;
use moodsense::Variable;

pub fn open_store(dir: &Path) -> anyhow::Result<Store> {
    Store::open(dir).with_context(|| format!("opening store {}", dir.display()))
}

pub fn ingest(store_dir: &Path, file: &Path, kind: RecordKind) -> anyhow::Result<IngestReport> {
    let mut store = open_store(store_dir)?;
    Ok(ingest_file(&mut store, file, kind)?)
}

pub struct Simulated {
    pub participants: usize,
    pub observations: usize,
    pub responses: usize,
    pub dir: PathBuf,
}

/// Writes a cohort in ingestion format under `out_dir/cohort`, optionally
/// loading it into the store as well.
pub fn simulate(
    config: &CohortConfig,
    out_dir: &Path,
    format: Format,
    store_dir: Option<&Path>,
) -> anyhow::Result<Simulated> {
    let cohort = generate_cohort(config)?;
    let dir = out_dir.join("cohort");
    export_cohort(&cohort, &dir, format)?;
    if let Some(store_dir) = store_dir {
        let ext = format.extension();
        for kind in [RecordKind::Participants, RecordKind::Observations, RecordKind::Responses] {
            let report = ingest(store_dir, &dir.join(format!("{kind}.{ext}")), kind)?;
            anyhow::ensure!(report.rejected.is_empty(), "simulated {kind} were rejected: {:?}", report.rejected);
        }
    }
    Ok(Simulated {
        participants: cohort.participants.len(),
        observations: cohort.observations.len(),
        responses: cohort.responses.len(),
        dir,
    })
}

pub struct CleanSummary {
    pub observations: usize,
    pub removed: usize,
    pub rows: usize,
    pub skipped: usize,
    pub path: PathBuf,
}

const ROW_COLUMNS: [Variable; 14] = [
    Variable::AvgBpm,
    Variable::LightLevel,
    Variable::Acceleration,
    Variable::Vmc,
    Variable::Neuroticism,
    Variable::Extraversion,
    Variable::Openness,
    Variable::Agreeableness,
    Variable::Conscientiousness,
    Variable::WeekendHoliday,
    Variable::GenderMale,
    Variable::Age,
    Variable::Weight,
    Variable::Sportiness,
];

/// Cleans the store's observations, assembles analysis rows and writes them
/// to `out_dir/feature_rows.csv`.
pub fn clean(store_dir: &Path, config: &PipelineConfig, out_dir: &Path) -> anyhow::Result<CleanSummary> {
    let store = open_store(store_dir)?;
    let snapshot = store.snapshot();
    let prepared = prepare(&snapshot, config)?;

    let mut csv = String::from("participant_id,timestamp,happiness,activation,mood_state");
    let extra = ROW_COLUMNS.iter().chain(&Variable::GPS);
    for v in extra.clone() {
        write!(csv, ",{}", v.key()).unwrap();
    }
    csv.push('\n');
    for r in &prepared.rows {
        write!(
            csv,
            "{},{},{},{},{}",
            r.participant_id,
            format_timestamp(&r.timestamp),
            r.label_happiness as u8,
            r.label_activation as u8,
            r.label_mood_state.code()
        )
        .unwrap();
        for v in extra.clone() {
            match r.value(*v) {
                Some(x) => write!(csv, ",{x}").unwrap(),
                None => csv.push(','),
            }
        }
        csv.push('\n');
    }
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("feature_rows.csv");
    std::fs::write(&path, csv)?;
    Ok(CleanSummary {
        observations: snapshot.observations.len(),
        removed: prepared.removed,
        rows: prepared.rows.len(),
        skipped: prepared.skipped,
        path,
    })
}

pub fn analyze(
    store_dir: &Path,
    analysis: Analysis,
    config: &PipelineConfig,
    seed: u64,
    out_dir: &Path,
) -> anyhow::Result<(PathBuf, PathBuf)> {
    let store = open_store(store_dir)?;
    Ok(run_pipeline(&store, analysis, config, seed, out_dir)?)
}

/// Writes `out_dir/map.geojson` and returns its path and the point count.
pub fn export_map(
    store_dir: &Path,
    config: &PipelineConfig,
    filter: &MapFilter,
    out_dir: &Path,
) -> anyhow::Result<(PathBuf, usize)> {
    let store = open_store(store_dir)?;
    let cleaned = clean_observations(store.observations().to_vec(), config.min_bpm);
    let layer = build_map_layer(
        store.responses(),
        &cleaned.kept,
        filter,
        Duration::minutes(config.join_window_minutes),
    );
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("map.geojson");
    let mut text = serde_json::to_string_pretty(&layer.to_geojson())?;
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok((path, layer.points.len()))
}

pub fn parse_time(s: &str) -> Result<DateTime<Utc>, String> {
    moodsense::ingest::parse_timestamp(s).map_err(|e| e.to_string())
}
