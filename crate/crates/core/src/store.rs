//! File-backed, append-only record store.
//!
//! A store is a directory holding `manifest.json` and one newline-delimited
//! JSON log per record type. Each record is written with a single `write`
//! call that ends in `\n`; a record only counts once its newline is on disk.
//! On open, a trailing fragment without a newline (a torn write) is cut off,
//! so the store always reopens to exactly its fully written records.
//!
//! Poll logs hold snapshots: the latest line for a poll id is its state.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MoodResponse, Observation, Participant};
use crate::sampling::Poll;

pub const STORE_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const PARTICIPANTS: &str = "participants.jsonl";
const OBSERVATIONS: &str = "observations.jsonl";
const RESPONSES: &str = "responses.jsonl";
const POLLS: &str = "polls.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub logs: Vec<String>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            version: STORE_VERSION,
            logs: [PARTICIPANTS, OBSERVATIONS, RESPONSES, POLLS].map(String::from).to_vec(),
        }
    }
}

/// Immutable copy of the store's contents, for analyses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshot {
    pub participants: Vec<Participant>,
    pub observations: Vec<Observation>,
    pub responses: Vec<MoodResponse>,
    pub polls: Vec<Poll>,
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    participants: BTreeMap<String, Participant>,
    observations: Vec<Observation>,
    observation_keys: HashSet<(String, DateTime<Utc>)>,
    responses: Vec<MoodResponse>,
    response_keys: HashSet<(String, DateTime<Utc>)>,
    polls: BTreeMap<String, Poll>,
}

/// Reads the complete lines of a log, cutting off a torn tail.
fn load_log<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        File::create(path)?;
        return Ok(Vec::new());
    }
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        log::warn!(
            "{}: discarding {} bytes of an incomplete record",
            path.display(),
            bytes.len() - complete
        );
        OpenOptions::new().write(true).open(path)?.set_len(complete as u64)?;
    }
    bytes[..complete]
        .split(|&b| b == b'\n')
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            serde_json::from_slice(l).map_err(|e| Error::StoreCorrupt {
                file: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn append_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = OpenOptions::new().append(true).create(true).open(path)?;
    f.write_all(&buf)?;
    f.flush()?;
    Ok(())
}

impl Store {
    /// Opens the store at `dir`, creating it if needed.
    pub fn open(dir: impl AsRef<Path>) -> Result<Store> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let manifest_path = dir.join(MANIFEST);
        if manifest_path.exists() {
            let m: Manifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?).map_err(|e| {
                Error::StoreCorrupt {
                    file: MANIFEST.into(),
                    line: e.line(),
                    message: e.to_string(),
                }
            })?;
            if m.version != STORE_VERSION {
                return Err(Error::StoreCorrupt {
                    file: MANIFEST.into(),
                    line: 1,
                    message: format!("unsupported store version {}", m.version),
                });
            }
        } else {
            let mut text = serde_json::to_string_pretty(&Manifest::default())?;
            text.push('\n');
            std::fs::write(&manifest_path, text)?;
        }

        let mut store = Store {
            participants: BTreeMap::new(),
            observations: Vec::new(),
            observation_keys: HashSet::new(),
            responses: Vec::new(),
            response_keys: HashSet::new(),
            polls: BTreeMap::new(),
            dir,
        };
        for p in load_log::<Participant>(&store.dir.join(PARTICIPANTS))? {
            store.participants.insert(p.id.clone(), p);
        }
        for o in load_log::<Observation>(&store.dir.join(OBSERVATIONS))? {
            store.observation_keys.insert((o.participant_id.clone(), o.timestamp));
            store.observations.push(o);
        }
        for r in load_log::<MoodResponse>(&store.dir.join(RESPONSES))? {
            store.response_keys.insert((r.participant_id.clone(), r.timestamp));
            store.responses.push(r);
        }
        for p in load_log::<Poll>(&store.dir.join(POLLS))? {
            store.polls.insert(p.id.clone(), p);
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append_participant(&mut self, p: Participant) -> Result<()> {
        p.validate()?;
        if self.participants.contains_key(&p.id) {
            return Err(Error::DuplicateId(format!("participant {}", p.id)));
        }
        append_lines(&self.dir.join(PARTICIPANTS), std::slice::from_ref(&p))?;
        self.participants.insert(p.id.clone(), p);
        Ok(())
    }

    /// Appends a batch atomically per record; the whole batch is validated
    /// first and rejected if any record is invalid or duplicated.
    pub fn append_observations(&mut self, batch: Vec<Observation>) -> Result<usize> {
        let mut fresh = HashSet::new();
        for o in &batch {
            o.validate()?;
            let key = (o.participant_id.clone(), o.timestamp);
            if self.observation_keys.contains(&key) || !fresh.insert(key) {
                return Err(Error::DuplicateId(format!(
                    "observation {} at {}",
                    o.participant_id,
                    crate::ingest::format_timestamp(&o.timestamp)
                )));
            }
        }
        append_lines(&self.dir.join(OBSERVATIONS), &batch)?;
        let n = batch.len();
        self.observation_keys.extend(fresh);
        self.observations.extend(batch);
        Ok(n)
    }

    pub fn append_response(&mut self, r: MoodResponse) -> Result<()> {
        self.append_responses(vec![r]).map(|_| ())
    }

    /// Batch form of [`Store::append_response`], all-or-nothing.
    pub fn append_responses(&mut self, batch: Vec<MoodResponse>) -> Result<usize> {
        let mut fresh = HashSet::new();
        for r in &batch {
            if r.participant_id.trim().is_empty() {
                return Err(Error::InvalidInput("participant_id is empty".into()));
            }
            let key = (r.participant_id.clone(), r.timestamp);
            if self.response_keys.contains(&key) || !fresh.insert(key) {
                return Err(Error::DuplicateId(format!(
                    "response {} at {}",
                    r.participant_id,
                    crate::ingest::format_timestamp(&r.timestamp)
                )));
            }
        }
        append_lines(&self.dir.join(RESPONSES), &batch)?;
        let n = batch.len();
        self.response_keys.extend(fresh);
        self.responses.extend(batch);
        Ok(n)
    }

    pub fn has_observation(&self, participant_id: &str, at: DateTime<Utc>) -> bool {
        self.observation_keys.contains(&(participant_id.to_string(), at))
    }

    pub fn has_response(&self, participant_id: &str, at: DateTime<Utc>) -> bool {
        self.response_keys.contains(&(participant_id.to_string(), at))
    }

    /// Records the current state of a poll. Later snapshots replace earlier
    /// ones with the same id.
    pub fn put_poll(&mut self, poll: Poll) -> Result<()> {
        append_lines(&self.dir.join(POLLS), std::slice::from_ref(&poll))?;
        self.polls.insert(poll.id.clone(), poll);
        Ok(())
    }

    pub fn participant(&self, id: &str) -> Option<&Participant> {
        self.participants.get(id)
    }

    pub fn participants(&self) -> impl Iterator<Item = &Participant> {
        self.participants.values()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn responses(&self) -> &[MoodResponse] {
        &self.responses
    }

    pub fn poll(&self, id: &str) -> Option<&Poll> {
        self.polls.get(id)
    }

    pub fn polls(&self) -> impl Iterator<Item = &Poll> {
        self.polls.values()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            participants: self.participants.values().cloned().collect(),
            observations: self.observations.clone(),
            responses: self.responses.clone(),
            polls: self.polls.values().cloned().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Gender, Quadrant};
    use crate::sampling::record_response;
    use chrono::TimeZone;

    fn participant(id: &str) -> Participant {
        Participant {
            id: id.into(),
            age: 30,
            gender: Gender::Other,
            weight: 70.0,
            sportiness: 1,
            factors: None,
            utc_offset_minutes: 0,
        }
    }

    fn obs(min: i64) -> Observation {
        Observation {
            participant_id: "P01".into(),
            timestamp: Utc.with_ymd_and_hms(2017, 1, 5, 12, 0, 0).unwrap() + chrono::Duration::minutes(min),
            bpm: 70.0,
            light_level: 2.0,
            acceleration: 0.5,
            vmc: 100.0,
            gps: None,
        }
    }

    #[test]
    fn reopen_sees_what_was_written() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Store::open(dir.path()).unwrap();
            s.append_participant(participant("P01")).unwrap();
            assert_eq!(s.append_observations(vec![obs(0), obs(1)]).unwrap(), 2);
            let t = obs(0).timestamp;
            s.append_response(MoodResponse::from_quadrant("P01", t, Quadrant::HappyCalm)).unwrap();
            let poll = Poll::issue("poll-1", "P01", t);
            s.put_poll(poll.clone()).unwrap();
            s.put_poll(record_response(&poll, Quadrant::HappyActivated, t).unwrap()).unwrap();
        }
        let s = Store::open(dir.path()).unwrap();
        assert_eq!(s.participants().count(), 1);
        assert_eq!(s.observations().len(), 2);
        assert_eq!(s.responses().len(), 1);
        assert!(!s.poll("poll-1").unwrap().is_pending());
    }

    #[test]
    fn duplicates_and_invalid_records_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open(dir.path()).unwrap();
        s.append_participant(participant("P01")).unwrap();
        assert!(matches!(s.append_participant(participant("P01")), Err(Error::DuplicateId(_))));
        s.append_observations(vec![obs(0)]).unwrap();
        assert!(s.append_observations(vec![obs(1), obs(0)]).is_err());
        assert!(s.append_observations(vec![obs(2), obs(2)]).is_err());
        let mut bad = obs(3);
        bad.light_level = 7.0;
        assert!(s.append_observations(vec![obs(4), bad]).is_err());
        // Rejected batches leave nothing behind.
        assert_eq!(s.observations().len(), 1);
        assert_eq!(Store::open(dir.path()).unwrap().observations().len(), 1);
    }

    #[test]
    fn corrupt_complete_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        Store::open(dir.path()).unwrap();
        std::fs::write(dir.path().join(OBSERVATIONS), "{ not json }\n").unwrap();
        assert!(matches!(Store::open(dir.path()), Err(Error::StoreCorrupt { line: 1, .. })));
    }

    #[test]
    fn truncation_never_yields_partial_records() {
        let dir = tempfile::tempdir().unwrap();
        let batch: Vec<Observation> = (0..6).map(obs).collect();
        {
            let mut s = Store::open(dir.path()).unwrap();
            for o in &batch {
                s.append_observations(vec![o.clone()]).unwrap();
            }
        }
        let path = dir.path().join(OBSERVATIONS);
        let full = std::fs::read(&path).unwrap();
        let ends: Vec<usize> = full.iter().enumerate().filter(|(_, &b)| b == b'\n').map(|(i, _)| i + 1).collect();
        for cut in 0..=full.len() {
            std::fs::write(&path, &full[..cut]).unwrap();
            let s = Store::open(dir.path()).unwrap();
            let expected = ends.iter().filter(|&&e| e <= cut).count();
            assert_eq!(s.observations(), &batch[..expected], "cut at {cut}");
            // The torn tail is gone from disk; appending continues cleanly.
            let on_disk = std::fs::read(&path).unwrap();
            assert!(on_disk.is_empty() || on_disk.ends_with(b"\n"));
        }
    }
}
