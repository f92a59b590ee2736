//! Domain records, the four-outcome mood grid, observation cleaning and
//! feature-row assembly.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, FixedOffset, NaiveDate, Utc, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower bound for a plausible heart rate; readings below it are
/// sensor dropouts.
pub const DEFAULT_MIN_BPM: f64 = 30.0;

/// Default half-width of the window joining sensor readings to a poll answer.
pub const DEFAULT_JOIN_WINDOW_MINUTES: i64 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Other,
}

impl Gender {
    pub fn is_male(self) -> bool {
        matches!(self, Gender::Male)
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Gender::Male),
            "female" | "f" => Ok(Gender::Female),
            "other" | "unspecified" | "" => Ok(Gender::Other),
            other => Err(Error::InvalidInput(format!("unknown gender {other:?}"))),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Other => "other",
        })
    }
}

/// Five-factor personality scores on the questionnaire's 0–100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BigFive {
    pub neuroticism: f64,
    pub extraversion: f64,
    pub openness: f64,
    pub agreeableness: f64,
    pub conscientiousness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    pub age: u32,
    pub gender: Gender,
    /// Kilograms.
    pub weight: f64,
    /// Self-rated 1 (low) to 3 (high).
    pub sportiness: u8,
    /// `None` flags the participant as factors-missing; such participants are
    /// left out of every model that uses personality predictors.
    pub factors: Option<BigFive>,
    /// Fixed offset of the participant's local time from UTC.
    #[serde(default)]
    pub utc_offset_minutes: i32,
}

impl Participant {
    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::InvalidInput("participant id is empty".into()));
        }
        if self.age == 0 {
            return Err(Error::InvalidInput("age must be positive".into()));
        }
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(Error::InvalidInput(format!(
                "weight {} is not a positive number",
                self.weight
            )));
        }
        if !(1..=3).contains(&self.sportiness) {
            return Err(Error::InvalidInput(format!(
                "sportiness {} outside 1-3",
                self.sportiness
            )));
        }
        if let Some(f) = &self.factors {
            for (name, v) in [
                ("neuroticism", f.neuroticism),
                ("extraversion", f.extraversion),
                ("openness", f.openness),
                ("agreeableness", f.agreeableness),
                ("conscientiousness", f.conscientiousness),
            ] {
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!("{name} is not finite")));
                }
            }
        }
        if self.utc_offset_minutes.abs() > 18 * 60 {
            return Err(Error::InvalidInput(format!(
                "utc offset {} minutes out of range",
                self.utc_offset_minutes
            )));
        }
        Ok(())
    }

    pub fn factors_missing(&self) -> bool {
        self.factors.is_none()
    }

    pub fn timezone(&self) -> FixedOffset {
        FixedOffset::east_opt(self.utc_offset_minutes * 60).expect("validated offset")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub latitude: f64,
    pub longitude: f64,
    /// Meters.
    pub altitude: f64,
}

/// One timestamped sensor snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub participant_id: String,
    pub timestamp: DateTime<Utc>,
    pub bpm: f64,
    /// Ambient light on the watch's 0–5 scale.
    pub light_level: f64,
    pub acceleration: f64,
    /// Vector magnitude counts.
    pub vmc: f64,
    pub gps: Option<GpsFix>,
}

impl Observation {
    pub fn gps_present(&self) -> bool {
        self.gps.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.participant_id.trim().is_empty() {
            return bad("participant_id is empty".into());
        }
        if !(self.bpm.is_finite() && self.bpm >= 0.0) {
            return bad(format!("bpm {} must be a non-negative number", self.bpm));
        }
        if !(0.0..=5.0).contains(&self.light_level) {
            return bad(format!("light_level {} outside [0, 5]", self.light_level));
        }
        if !(self.acceleration.is_finite() && self.acceleration >= 0.0) {
            return bad(format!(
                "acceleration {} must be a non-negative number",
                self.acceleration
            ));
        }
        if !(self.vmc.is_finite() && self.vmc >= 0.0) {
            return bad(format!("vmc {} must be a non-negative number", self.vmc));
        }
        if let Some(g) = &self.gps {
            if !(-90.0..=90.0).contains(&g.latitude) {
                return bad(format!("latitude {} outside [-90, 90]", g.latitude));
            }
            if !(-180.0..=180.0).contains(&g.longitude) {
                return bad(format!("longitude {} outside [-180, 180]", g.longitude));
            }
            if !g.altitude.is_finite() {
                return bad("altitude is not finite".into());
            }
        }
        Ok(())
    }
}

/// Combined mood code: 1 happy-activated, 2 happy-calm, 3 unhappy-activated,
/// 4 unhappy-calm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct MoodState(u8);

impl MoodState {
    pub fn code(self) -> u8 {
        self.0
    }

    pub fn happiness(self) -> bool {
        self.0 <= 2
    }

    pub fn activation(self) -> bool {
        self.0 % 2 == 1
    }
}

impl TryFrom<u8> for MoodState {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        if (1..=4).contains(&v) {
            Ok(MoodState(v))
        } else {
            Err(Error::InvalidInput(format!("mood state {v} outside 1-4")))
        }
    }
}

impl From<MoodState> for u8 {
    fn from(m: MoodState) -> u8 {
        m.0
    }
}

impl fmt::Display for MoodState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn encode_mood_state(happiness: bool, activation: bool) -> MoodState {
    MoodState(match (happiness, activation) {
        (true, true) => 1,
        (true, false) => 2,
        (false, true) => 3,
        (false, false) => 4,
    })
}

/// A cell of the four-outcome answer grid: pleasantness on the horizontal
/// axis, activation on the vertical one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrant {
    HappyActivated,
    HappyCalm,
    UnhappyActivated,
    UnhappyCalm,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::HappyActivated,
        Quadrant::HappyCalm,
        Quadrant::UnhappyActivated,
        Quadrant::UnhappyCalm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quadrant::HappyActivated => "happy-activated",
            Quadrant::HappyCalm => "happy-calm",
            Quadrant::UnhappyActivated => "unhappy-activated",
            Quadrant::UnhappyCalm => "unhappy-calm",
        }
    }
}

impl FromStr for Quadrant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Quadrant::ALL
            .into_iter()
            .find(|q| q.name() == s)
            .ok_or_else(|| Error::UnknownQuadrant(s.to_string()))
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Maps a grid cell to its `(happiness, activation)` bits.
pub fn decode_grid_selection(quadrant: Quadrant) -> (bool, bool) {
    match quadrant {
        Quadrant::HappyActivated => (true, true),
        Quadrant::HappyCalm => (true, false),
        Quadrant::UnhappyActivated => (false, true),
        Quadrant::UnhappyCalm => (false, false),
    }
}

/// One answered poll. The combined mood state is always derived from the two
/// bits, so it cannot disagree with them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoodResponse {
    pub participant_id: String,
    pub timestamp: DateTime<Utc>,
    pub happiness: bool,
    pub activation: bool,
}

impl MoodResponse {
    pub fn from_quadrant(
        participant_id: impl Into<String>,
        timestamp: DateTime<Utc>,
        quadrant: Quadrant,
    ) -> Self {
        let (happiness, activation) = decode_grid_selection(quadrant);
        MoodResponse {
            participant_id: participant_id.into(),
            timestamp,
            happiness,
            activation,
        }
    }

    pub fn mood_state(&self) -> MoodState {
        encode_mood_state(self.happiness, self.activation)
    }
}

/// Explicitly configured holiday dates (local calendar dates).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HolidayCalendar {
    pub dates: BTreeSet<NaiveDate>,
}

impl HolidayCalendar {
    pub fn new<I: IntoIterator<Item = NaiveDate>>(dates: I) -> Self {
        HolidayCalendar {
            dates: dates.into_iter().collect(),
        }
    }

    /// Christmas Day and New Year's Eve 2016, the public holidays falling in
    /// the winter collection period.
    pub fn winter_2016() -> Self {
        HolidayCalendar::new([
            NaiveDate::from_ymd_opt(2016, 12, 25).expect("valid date"),
            NaiveDate::from_ymd_opt(2016, 12, 31).expect("valid date"),
        ])
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.dates.contains(&date)
    }
}

/// Result of dropping implausible heart-rate readings.
#[derive(Debug, Clone, PartialEq)]
pub struct Cleaned {
    pub kept: Vec<Observation>,
    pub removed: usize,
}

/// Keeps exactly the observations with `bpm >= min_bpm`, preserving order.
pub fn clean_observations(observations: Vec<Observation>, min_bpm: f64) -> Cleaned {
    let before = observations.len();
    let kept: Vec<_> = observations
        .into_iter()
        .filter(|o| o.bpm >= min_bpm)
        .collect();
    let removed = before - kept.len();
    if removed > 0 {
        log::info!("cleaning removed {removed} of {before} observations below {min_bpm} bpm");
    }
    Cleaned { kept, removed }
}

/// True iff the local date falls on a Saturday, a Sunday or a configured
/// holiday.
pub fn weekend_holiday_flag(
    timestamp: DateTime<Utc>,
    calendar: &HolidayCalendar,
    timezone: FixedOffset,
) -> bool {
    let date = timestamp.with_timezone(&timezone).date_naive();
    matches!(date.weekday(), Weekday::Sat | Weekday::Sun) || calendar.contains(date)
}

/// A measured or derived quantity that can appear as an analysis column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Happiness,
    Activation,
    MoodState,
    AvgBpm,
    LightLevel,
    Acceleration,
    Vmc,
    Neuroticism,
    Extraversion,
    Openness,
    Agreeableness,
    Conscientiousness,
    WeekendHoliday,
    GenderMale,
    Age,
    Weight,
    Sportiness,
    Latitude,
    Longitude,
    Altitude,
}

impl Variable {
    /// The sixteen correlation-table columns, in table order.
    pub const CORRELATION_TABLE: [Variable; 16] = [
        Variable::Happiness,
        Variable::Activation,
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

    pub const SENSORS: [Variable; 4] = [
        Variable::AvgBpm,
        Variable::LightLevel,
        Variable::Acceleration,
        Variable::Vmc,
    ];

    pub const CONTROLS: [Variable; 5] = [
        Variable::WeekendHoliday,
        Variable::GenderMale,
        Variable::Age,
        Variable::Weight,
        Variable::Sportiness,
    ];

    pub const FACTORS: [Variable; 5] = [
        Variable::Neuroticism,
        Variable::Extraversion,
        Variable::Openness,
        Variable::Agreeableness,
        Variable::Conscientiousness,
    ];

    pub const GPS: [Variable; 3] = [Variable::Latitude, Variable::Longitude, Variable::Altitude];

    pub const ALL: [Variable; 20] = [
        Variable::Happiness,
        Variable::Activation,
        Variable::MoodState,
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
        Variable::Latitude,
        Variable::Longitude,
        Variable::Altitude,
    ];

    /// Human-readable label used in rendered tables.
    pub fn label(self) -> &'static str {
        match self {
            Variable::Happiness => "Happiness",
            Variable::Activation => "Activation",
            Variable::MoodState => "Mood State",
            Variable::AvgBpm => "Average BPM",
            Variable::LightLevel => "Light Level",
            Variable::Acceleration => "Acceleration",
            Variable::Vmc => "VMC",
            Variable::Neuroticism => "Neuroticism",
            Variable::Extraversion => "Extraversion",
            Variable::Openness => "Openness to Experience",
            Variable::Agreeableness => "Agreeableness",
            Variable::Conscientiousness => "Conscientiousness",
            Variable::WeekendHoliday => "Weekend/Holiday",
            Variable::GenderMale => "Gender Male",
            Variable::Age => "Age",
            Variable::Weight => "Weight",
            Variable::Sportiness => "Sportiness",
            Variable::Latitude => "Latitude",
            Variable::Longitude => "Longitude",
            Variable::Altitude => "Altitude",
        }
    }

    /// Machine key, also accepted by [`FromStr`].
    pub fn key(self) -> &'static str {
        match self {
            Variable::Happiness => "happiness",
            Variable::Activation => "activation",
            Variable::MoodState => "mood_state",
            Variable::AvgBpm => "avg_bpm",
            Variable::LightLevel => "light_level",
            Variable::Acceleration => "acceleration",
            Variable::Vmc => "vmc",
            Variable::Neuroticism => "neuroticism",
            Variable::Extraversion => "extraversion",
            Variable::Openness => "openness",
            Variable::Agreeableness => "agreeableness",
            Variable::Conscientiousness => "conscientiousness",
            Variable::WeekendHoliday => "weekend_holiday",
            Variable::GenderMale => "gender_male",
            Variable::Age => "age",
            Variable::Weight => "weight",
            Variable::Sportiness => "sportiness",
            Variable::Latitude => "latitude",
            Variable::Longitude => "longitude",
            Variable::Altitude => "altitude",
        }
    }
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variable::ALL
            .into_iter()
            .find(|v| v.key() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown variable {s:?}")))
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Which label an analysis predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Happiness,
    Activation,
    MoodState,
}

impl Outcome {
    pub const ALL: [Outcome; 3] = [Outcome::Happiness, Outcome::Activation, Outcome::MoodState];

    pub fn label(self) -> &'static str {
        match self {
            Outcome::Happiness => "Happiness",
            Outcome::Activation => "Activation",
            Outcome::MoodState => "Mood State",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Outcome::Happiness => "happiness",
            Outcome::Activation => "activation",
            Outcome::MoodState => "mood_state",
        }
    }

    /// Class label of a row: 0/1 for the binary outcomes, 1–4 for mood state.
    pub fn class_of(self, row: &FeatureRow) -> u32 {
        match self {
            Outcome::Happiness => row.label_happiness as u32,
            Outcome::Activation => row.label_activation as u32,
            Outcome::MoodState => row.label_mood_state.code() as u32,
        }
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Outcome::ALL
            .into_iter()
            .find(|o| o.key() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown outcome {s:?}")))
    }
}

/// A cleaned analysis row: one answered poll joined to the sensor readings
/// around it and to the participant's static attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub participant_id: String,
    pub timestamp: DateTime<Utc>,
    pub label_happiness: bool,
    pub label_activation: bool,
    pub label_mood_state: MoodState,
    pub avg_bpm: f64,
    pub light_level: f64,
    pub acceleration: f64,
    pub vmc: f64,
    pub weekend_holiday: bool,
    pub gender_male: bool,
    pub age: f64,
    pub weight: f64,
    pub sportiness: f64,
    pub factors: Option<BigFive>,
    pub gps: Option<GpsFix>,
}

fn bit(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl FeatureRow {
    /// Numeric value of a column; `None` when the row does not carry it.
    pub fn value(&self, var: Variable) -> Option<f64> {
        let f = self.factors.as_ref();
        let g = self.gps.as_ref();
        match var {
            Variable::Happiness => Some(bit(self.label_happiness)),
            Variable::Activation => Some(bit(self.label_activation)),
            Variable::MoodState => Some(self.label_mood_state.code() as f64),
            Variable::AvgBpm => Some(self.avg_bpm),
            Variable::LightLevel => Some(self.light_level),
            Variable::Acceleration => Some(self.acceleration),
            Variable::Vmc => Some(self.vmc),
            Variable::Neuroticism => f.map(|f| f.neuroticism),
            Variable::Extraversion => f.map(|f| f.extraversion),
            Variable::Openness => f.map(|f| f.openness),
            Variable::Agreeableness => f.map(|f| f.agreeableness),
            Variable::Conscientiousness => f.map(|f| f.conscientiousness),
            Variable::WeekendHoliday => Some(bit(self.weekend_holiday)),
            Variable::GenderMale => Some(bit(self.gender_male)),
            Variable::Age => Some(self.age),
            Variable::Weight => Some(self.weight),
            Variable::Sportiness => Some(self.sportiness),
            Variable::Latitude => g.map(|g| g.latitude),
            Variable::Longitude => g.map(|g| g.longitude),
            Variable::Altitude => g.map(|g| g.altitude),
        }
    }
}

/// Why a response produced no feature row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkipReason {
    UnknownParticipant,
    NoObservationInWindow,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipReason::UnknownParticipant => "participant not registered",
            SkipReason::NoObservationInWindow => "no cleaned observation within the join window",
        })
    }
}

/// Joins one response to the in-window observations of its participant.
///
/// Sensor fields are means over every observation within `±window` of the
/// response; GPS comes from the single nearest observation (earlier wins a
/// tie) and is absent if that observation has no fix. `observations` may hold
/// any participants and need not be sorted.
pub fn assemble_feature_row(
    response: &MoodResponse,
    observations: &[Observation],
    participant: &Participant,
    calendar: &HolidayCalendar,
    window: Duration,
) -> std::result::Result<FeatureRow, SkipReason> {
    if participant.id != response.participant_id {
        return Err(SkipReason::UnknownParticipant);
    }
    let mut in_window: Vec<&Observation> = observations
        .iter()
        .filter(|o| {
            o.participant_id == response.participant_id
                && (o.timestamp - response.timestamp).abs() <= window
        })
        .collect();
    // Same summation order as the batch path.
    in_window.sort_by_key(|o| o.timestamp);
    build_row(response, &in_window, participant, calendar)
}

fn build_row(
    response: &MoodResponse,
    in_window: &[&Observation],
    participant: &Participant,
    calendar: &HolidayCalendar,
) -> std::result::Result<FeatureRow, SkipReason> {
    if in_window.is_empty() {
        return Err(SkipReason::NoObservationInWindow);
    }
    let n = in_window.len() as f64;
    let mean = |f: fn(&Observation) -> f64| in_window.iter().map(|o| f(o)).sum::<f64>() / n;
    let nearest = in_window
        .iter()
        .min_by_key(|o| {
            let d = (o.timestamp - response.timestamp).abs();
            (d, o.timestamp)
        })
        .expect("non-empty");
    Ok(FeatureRow {
        participant_id: response.participant_id.clone(),
        timestamp: response.timestamp,
        label_happiness: response.happiness,
        label_activation: response.activation,
        label_mood_state: response.mood_state(),
        avg_bpm: mean(|o| o.bpm),
        light_level: mean(|o| o.light_level),
        acceleration: mean(|o| o.acceleration),
        vmc: mean(|o| o.vmc),
        weekend_holiday: weekend_holiday_flag(response.timestamp, calendar, participant.timezone()),
        gender_male: participant.gender.is_male(),
        age: participant.age as f64,
        weight: participant.weight,
        sportiness: participant.sportiness as f64,
        factors: participant.factors,
        gps: nearest.gps,
    })
}

/// Outcome of assembling a whole dataset.
#[derive(Debug, Clone, Default)]
pub struct Assembly {
    pub rows: Vec<FeatureRow>,
    /// Index into the response slice and the reason it was dropped.
    pub skipped: Vec<(usize, SkipReason)>,
}

/// Batch form of [`assemble_feature_row`], indexing observations per
/// participant so each response costs a binary search. Output rows follow
/// the order of `responses`.
pub fn assemble_feature_rows(
    responses: &[MoodResponse],
    observations: &[Observation],
    participants: &[Participant],
    calendar: &HolidayCalendar,
    window: Duration,
) -> Assembly {
    let by_id: HashMap<&str, &Participant> =
        participants.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut series: HashMap<&str, Vec<&Observation>> = HashMap::new();
    for o in observations {
        series.entry(o.participant_id.as_str()).or_default().push(o);
    }
    for s in series.values_mut() {
        s.sort_by_key(|o| o.timestamp);
    }

    let mut out = Assembly::default();
    for (i, r) in responses.iter().enumerate() {
        let Some(p) = by_id.get(r.participant_id.as_str()) else {
            log::debug!("response {i} skipped: {}", SkipReason::UnknownParticipant);
            out.skipped.push((i, SkipReason::UnknownParticipant));
            continue;
        };
        let obs = series
            .get(r.participant_id.as_str())
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let lo = obs.partition_point(|o| o.timestamp < r.timestamp - window);
        let hi = obs.partition_point(|o| o.timestamp <= r.timestamp + window);
        match build_row(r, &obs[lo..hi], p, calendar) {
            Ok(row) => out.rows.push(row),
            Err(reason) => {
                log::debug!("response {i} skipped: {reason}");
                out.skipped.push((i, reason));
            }
        }
    }
    if !out.skipped.is_empty() {
        log::info!(
            "assembled {} rows, skipped {} responses",
            out.rows.len(),
            out.skipped.len()
        );
    }
    out
}
