//! File formats for participants, observations and responses.
//!
//! CSV files must start with the exact header for their kind. JSONL files
//! hold one JSON object per line with the same field names. Any row that
//! fails to parse or validate is rejected with its line number; the rest of
//! the file is still accepted.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BigFive, Gender, GpsFix, MoodResponse, MoodState, Observation, Participant};
use crate::store::Store;

pub const OBSERVATION_COLUMNS: [&str; 9] = [
    "participant_id",
    "timestamp",
    "bpm",
    "light_level",
    "acceleration",
    "vmc",
    "latitude",
    "longitude",
    "altitude",
];

pub const PARTICIPANT_COLUMNS: [&str; 11] = [
    "id",
    "age",
    "gender",
    "weight",
    "sportiness",
    "neuroticism",
    "extraversion",
    "openness",
    "agreeableness",
    "conscientiousness",
    "utc_offset_minutes",
];

pub const RESPONSE_COLUMNS: [&str; 5] = ["participant_id", "timestamp", "happiness", "activation", "mood_state"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }

    /// Format implied by a file extension (`.csv`, `.jsonl` or `.ndjson`).
    pub fn from_path(path: &Path) -> Result<Format> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("csv") => Ok(Format::Csv),
            Some("jsonl") | Some("ndjson") => Ok(Format::Jsonl),
            _ => Err(Error::Schema {
                path: path.to_path_buf(),
                message: "unknown file extension; expected .csv or .jsonl".into(),
            }),
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            _ => Err(Error::InvalidInput(format!("unknown format {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Observations,
    Participants,
    Responses,
}

impl FromStr for RecordKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observations" => Ok(RecordKind::Observations),
            "participants" => Ok(RecordKind::Participants),
            "responses" => Ok(RecordKind::Responses),
            _ => Err(Error::InvalidInput(format!(
                "unknown record kind {s:?}; expected observations, participants or responses"
            ))),
        }
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordKind::Observations => "observations",
            RecordKind::Participants => "participants",
            RecordKind::Responses => "responses",
        })
    }
}

/// A rejected input row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line in the source file.
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    /// Accepted records with their source line.
    pub records: Vec<(u64, T)>,
    pub rejected: Vec<RowError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub kind: RecordKind,
    pub accepted: usize,
    pub rejected: Vec<RowError>,
}

// Flat on-disk records, shared by the CSV and JSONL encodings.

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ObservationRecord {
    participant_id: String,
    timestamp: String,
    bpm: f64,
    light_level: f64,
    acceleration: f64,
    vmc: f64,
    latitude: Option<f64>,
    longitude: Option<f64>,
    altitude: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParticipantRecord {
    id: String,
    age: u32,
    gender: String,
    weight: f64,
    sportiness: u8,
    neuroticism: Option<f64>,
    extraversion: Option<f64>,
    openness: Option<f64>,
    agreeableness: Option<f64>,
    conscientiousness: Option<f64>,
    utc_offset_minutes: Option<i32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResponseRecord {
    participant_id: String,
    timestamp: String,
    happiness: u8,
    activation: u8,
    mood_state: Option<u8>,
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::InvalidInput(format!("timestamp {s:?} is not RFC 3339: {e}")))
}

fn flag(name: &str, v: u8) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::InvalidInput(format!("{name} must be 0 or 1, got {v}"))),
    }
}

impl TryFrom<ObservationRecord> for Observation {
    type Error = Error;

    fn try_from(r: ObservationRecord) -> Result<Self> {
        let gps = match (r.latitude, r.longitude, r.altitude) {
            (Some(latitude), Some(longitude), Some(altitude)) => Some(GpsFix {
                latitude,
                longitude,
                altitude,
            }),
            (None, None, None) => None,
            _ => {
                return Err(Error::InvalidInput(
                    "latitude, longitude and altitude must be all present or all blank".into(),
                ))
            }
        };
        let o = Observation {
            participant_id: r.participant_id,
            timestamp: parse_timestamp(&r.timestamp)?,
            bpm: r.bpm,
            light_level: r.light_level,
            acceleration: r.acceleration,
            vmc: r.vmc,
            gps,
        };
        o.validate()?;
        Ok(o)
    }
}

impl From<&Observation> for ObservationRecord {
    fn from(o: &Observation) -> Self {
        ObservationRecord {
            participant_id: o.participant_id.clone(),
            timestamp: format_timestamp(&o.timestamp),
            bpm: o.bpm,
            light_level: o.light_level,
            acceleration: o.acceleration,
            vmc: o.vmc,
            latitude: o.gps.map(|g| g.latitude),
            longitude: o.gps.map(|g| g.longitude),
            altitude: o.gps.map(|g| g.altitude),
        }
    }
}

impl TryFrom<ParticipantRecord> for Participant {
    type Error = Error;

    fn try_from(r: ParticipantRecord) -> Result<Self> {
        let factors = match (r.neuroticism, r.extraversion, r.openness, r.agreeableness, r.conscientiousness) {
            (Some(neuroticism), Some(extraversion), Some(openness), Some(agreeableness), Some(conscientiousness)) => {
                Some(BigFive {
                    neuroticism,
                    extraversion,
                    openness,
                    agreeableness,
                    conscientiousness,
                })
            }
            (None, None, None, None, None) => None,
            _ => {
                return Err(Error::InvalidInput(
                    "personality scores must be all present or all blank".into(),
                ))
            }
        };
        let p = Participant {
            id: r.id,
            age: r.age,
            gender: r.gender.parse::<Gender>()?,
            weight: r.weight,
            sportiness: r.sportiness,
            factors,
            utc_offset_minutes: r.utc_offset_minutes.unwrap_or(0),
        };
        p.validate()?;
        Ok(p)
    }
}

impl From<&Participant> for ParticipantRecord {
    fn from(p: &Participant) -> Self {
        let f = p.factors.as_ref();
        ParticipantRecord {
            id: p.id.clone(),
            age: p.age,
            gender: p.gender.to_string(),
            weight: p.weight,
            sportiness: p.sportiness,
            neuroticism: f.map(|f| f.neuroticism),
            extraversion: f.map(|f| f.extraversion),
            openness: f.map(|f| f.openness),
            agreeableness: f.map(|f| f.agreeableness),
            conscientiousness: f.map(|f| f.conscientiousness),
            utc_offset_minutes: Some(p.utc_offset_minutes),
        }
    }
}

impl TryFrom<ResponseRecord> for MoodResponse {
    type Error = Error;

    fn try_from(r: ResponseRecord) -> Result<Self> {
        if r.participant_id.trim().is_empty() {
            return Err(Error::InvalidInput("participant_id is empty".into()));
        }
        let resp = MoodResponse {
            participant_id: r.participant_id,
            timestamp: parse_timestamp(&r.timestamp)?,
            happiness: flag("happiness", r.happiness)?,
            activation: flag("activation", r.activation)?,
        };
        if let Some(code) = r.mood_state {
            let given = MoodState::try_from(code)?;
            if given != resp.mood_state() {
                return Err(Error::InvalidInput(format!(
                    "mood_state {code} disagrees with happiness={} activation={} (expected {})",
                    r.happiness,
                    r.activation,
                    resp.mood_state()
                )));
            }
        }
        Ok(resp)
    }
}

impl From<&MoodResponse> for ResponseRecord {
    fn from(r: &MoodResponse) -> Self {
        ResponseRecord {
            participant_id: r.participant_id.clone(),
            timestamp: format_timestamp(&r.timestamp),
            happiness: r.happiness as u8,
            activation: r.activation as u8,
            mood_state: Some(r.mood_state().code()),
        }
    }
}

fn read_records<R, T>(path: &Path, columns: &[&str]) -> Result<Parsed<T>>
where
    R: for<'de> Deserialize<'de>,
    T: TryFrom<R, Error = Error>,
{
    let mut out = Parsed {
        records: Vec::new(),
        rejected: Vec::new(),
    };
    match Format::from_path(path)? {
        Format::Csv => {
            let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
            let header = reader.headers()?.clone();
            if header.iter().ne(columns.iter().copied()) {
                return Err(Error::Schema {
                    path: path.to_path_buf(),
                    message: format!(
                        "header must be {:?}, found {:?}",
                        columns.join(","),
                        header.iter().collect::<Vec<_>>().join(",")
                    ),
                });
            }
            for result in reader.records() {
                let (line, parsed) = match result {
                    Ok(rec) => {
                        let line = rec.position().map_or(0, |p| p.line());
                        let parsed = rec
                            .deserialize::<R>(Some(&header))
                            .map_err(|e| Error::InvalidInput(e.to_string()))
                            .and_then(T::try_from);
                        (line, parsed)
                    }
                    Err(e) => (
                        e.position().map_or(0, |p| p.line()),
                        Err(Error::InvalidInput(e.to_string())),
                    ),
                };
                match parsed {
                    Ok(v) => out.records.push((line, v)),
                    Err(e) => out.rejected.push(RowError {
                        line,
                        message: e.to_string(),
                    }),
                }
            }
        }
        Format::Jsonl => {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line_no = i as u64 + 1;
                let text = line?;
                if text.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<R>(&text)
                    .map_err(|e| Error::InvalidInput(e.to_string()))
                    .and_then(T::try_from);
                match parsed {
                    Ok(v) => out.records.push((line_no, v)),
                    Err(e) => out.rejected.push(RowError {
                        line: line_no,
                        message: e.to_string(),
                    }),
                }
            }
        }
    }
    for r in &out.rejected {
        log::warn!("{}: {r}", path.display());
    }
    Ok(out)
}

pub fn read_observations(path: &Path) -> Result<Parsed<Observation>> {
    read_records::<ObservationRecord, _>(path, &OBSERVATION_COLUMNS)
}

pub fn read_participants(path: &Path) -> Result<Parsed<Participant>> {
    read_records::<ParticipantRecord, _>(path, &PARTICIPANT_COLUMNS)
}

pub fn read_responses(path: &Path) -> Result<Parsed<MoodResponse>> {
    read_records::<ResponseRecord, _>(path, &RESPONSE_COLUMNS)
}

fn write_records<R: Serialize>(path: &Path, columns: &[&str], records: impl Iterator<Item = R>, format: Format) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(columns)?;
            for r in records {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Jsonl => {
            for r in records {
                serde_json::to_writer(&mut out, &r)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

/// Decodes one observation in the flat JSONL record layout.
pub fn observation_from_json(value: serde_json::Value) -> Result<Observation> {
    let r: ObservationRecord = serde_json::from_value(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Observation::try_from(r)
}

/// Decodes one participant in the flat JSONL record layout.
pub fn participant_from_json(value: serde_json::Value) -> Result<Participant> {
    let r: ParticipantRecord = serde_json::from_value(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Participant::try_from(r)
}

/// Flat JSONL record layout of an observation.
pub fn observation_to_json(o: &Observation) -> serde_json::Value {
    serde_json::to_value(ObservationRecord::from(o)).expect("flat record serializes")
}

/// Flat JSONL record layout of a response, including its mood-state code.
pub fn response_to_json(r: &MoodResponse) -> serde_json::Value {
    serde_json::to_value(ResponseRecord::from(r)).expect("flat record serializes")
}

pub fn write_observations(path: &Path, records: &[Observation], format: Format) -> Result<()> {
    write_records(path, &OBSERVATION_COLUMNS, records.iter().map(ObservationRecord::from), format)
}

pub fn write_participants(path: &Path, records: &[Participant], format: Format) -> Result<()> {
    write_records(path, &PARTICIPANT_COLUMNS, records.iter().map(ParticipantRecord::from), format)
}

pub fn write_responses(path: &Path, records: &[MoodResponse], format: Format) -> Result<()> {
    write_records(path, &RESPONSE_COLUMNS, records.iter().map(ResponseRecord::from), format)
}

/// Parses a file and appends its valid records to the store. Rows that fail
/// parsing, validation, or the store's uniqueness rules are reported by line.
pub fn ingest_file(store: &mut Store, path: &Path, kind: RecordKind) -> Result<IngestReport> {
    /// Splits parsed rows into fresh records and duplicate-key rejections.
    fn dedupe<T>(
        parsed: Parsed<T>,
        key: impl Fn(&T) -> (String, DateTime<Utc>),
        exists: impl Fn(&(String, DateTime<Utc>)) -> bool,
    ) -> (Vec<T>, Vec<RowError>) {
        let mut rejected = parsed.rejected;
        let mut seen = HashSet::new();
        let mut fresh = Vec::new();
        for (line, rec) in parsed.records {
            let k = key(&rec);
            if exists(&k) || !seen.insert(k.clone()) {
                rejected.push(RowError {
                    line,
                    message: format!("duplicate record for {} at {}", k.0, format_timestamp(&k.1)),
                });
            } else {
                fresh.push(rec);
            }
        }
        (fresh, rejected)
    }

    let (accepted, mut rejected) = match kind {
        RecordKind::Observations => {
            let (fresh, rejected) = dedupe(
                read_observations(path)?,
                |o| (o.participant_id.clone(), o.timestamp),
                |k| store.has_observation(&k.0, k.1),
            );
            (store.append_observations(fresh)?, rejected)
        }
        RecordKind::Responses => {
            let (fresh, rejected) = dedupe(
                read_responses(path)?,
                |r| (r.participant_id.clone(), r.timestamp),
                |k| store.has_response(&k.0, k.1),
            );
            (store.append_responses(fresh)?, rejected)
        }
        RecordKind::Participants => {
            let parsed = read_participants(path)?;
            let mut rejected = parsed.rejected;
            let mut accepted = 0;
            for (line, p) in parsed.records {
                match store.append_participant(p) {
                    Ok(()) => accepted += 1,
                    Err(e @ Error::DuplicateId(_)) | Err(e @ Error::InvalidInput(_)) => rejected.push(RowError {
                        line,
                        message: e.to_string(),
                    }),
                    Err(e) => return Err(e),
                }
            }
            (accepted, rejected)
        }
    };
    rejected.sort_by_key(|r| r.line);
    log::info!(
        "{}: {accepted} {kind} accepted, {} rejected",
        path.display(),
        rejected.len()
    );
    Ok(IngestReport {
        kind,
        accepted,
        rejected,
    })
}
