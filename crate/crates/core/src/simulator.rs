//! Synthetic cohorts drawn from a known latent model.
//!
//! Each answered poll gets a latent linear predictor per outcome,
//! `η = intercept + Σ β_v x_v + u_participant + cluster_shift`, where `x_v`
//! are the values the feature assembler will later compute for that poll
//! (window means of the generated observations plus the participant's static
//! attributes). Labels are logistic draws from `η`, or a fixed threshold
//! rule on the sensor means when a noiseless target is needed.
//!
//! Location enters only through the per-cluster shifts, never as a linear
//! function of coordinates.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glmm::{icc, Group, GroupedData};
use crate::ingest::{self, Format};
use crate::model::{
    encode_mood_state, weekend_holiday_flag, BigFive, FeatureRow, Gender, GpsFix, HolidayCalendar,
    MoodResponse, Observation, Participant, Variable, DEFAULT_MIN_BPM,
};
use crate::sampling::{plan_daily_polls, PollConfig};
use crate::seed::derive_seed;

/// Intercept plus per-variable slopes on the raw variable scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub intercept: f64,
    pub slopes: BTreeMap<Variable, f64>,
}

impl Coefficients {
    pub fn new(intercept: f64, slopes: &[(Variable, f64)]) -> Self {
        Coefficients {
            intercept,
            slopes: slopes.iter().copied().collect(),
        }
    }

    pub fn slope(&self, v: Variable) -> f64 {
        self.slopes.get(&v).copied().unwrap_or(0.0)
    }

    fn linear(&self, row: &FeatureRow) -> f64 {
        self.intercept
            + self
                .slopes
                .iter()
                .map(|(v, b)| b * row.value(*v).unwrap_or(0.0))
                .sum::<f64>()
    }
}

/// Parameters of the per-poll sensor process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorProcess {
    pub bpm_mean: f64,
    /// Peak-to-mean size of the daily heart-rate cycle (peak mid-afternoon).
    pub bpm_amplitude: f64,
    /// Added while the participant is moving.
    pub bpm_activity: f64,
    pub bpm_noise_sd: f64,
    pub bpm_floor: f64,
    pub bpm_ceiling: f64,
    /// Light level at 13:00 local; the cycle is a cosine over the day.
    pub light_mean: f64,
    pub light_amplitude: f64,
    pub light_noise_sd: f64,
    /// Probability that a poll catches the participant in a movement burst.
    pub movement_probability: f64,
    pub acceleration_rest: f64,
    pub acceleration_burst: f64,
    pub acceleration_noise_sd: f64,
    pub vmc_per_acceleration: f64,
    pub vmc_noise_sd: f64,
    pub vmc_max: f64,
}

impl Default for SensorProcess {
    fn default() -> Self {
        SensorProcess {
            bpm_mean: 70.0,
            bpm_amplitude: 8.0,
            bpm_activity: 15.0,
            bpm_noise_sd: 4.0,
            bpm_floor: 40.0,
            bpm_ceiling: 180.0,
            light_mean: 2.5,
            light_amplitude: 1.5,
            light_noise_sd: 0.6,
            movement_probability: 0.3,
            acceleration_rest: 0.25,
            acceleration_burst: 1.2,
            acceleration_noise_sd: 0.15,
            vmc_per_acceleration: 400.0,
            vmc_noise_sd: 30.0,
            vmc_max: 2000.0,
        }
    }
}

/// A place a participant frequents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationCluster {
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
    /// Probability that a poll happens here. Sums to 1 per participant.
    pub probability: f64,
    pub happiness_shift: f64,
    pub activation_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocationConfig {
    pub clusters_per_participant: usize,
    pub center_latitude: f64,
    pub center_longitude: f64,
    /// Spread of cluster centres around the cohort centre, in degrees.
    pub spread_deg: f64,
    /// Per-observation GPS jitter around the cluster centre, in degrees.
    pub jitter_deg: f64,
    pub shift_sd_happiness: f64,
    pub shift_sd_activation: f64,
}

impl Default for LocationConfig {
    fn default() -> Self {
        LocationConfig {
            clusters_per_participant: 4,
            center_latitude: 42.36,
            center_longitude: -71.09,
            spread_deg: 0.03,
            jitter_deg: 0.0002,
            shift_sd_happiness: 0.5,
            shift_sd_activation: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LabelMode {
    /// Bernoulli draws with probability `logistic(η)`.
    Logistic,
    /// `happiness = light mean < light_cut`, `activation = acceleration mean > acceleration_cut`.
    Threshold { light_cut: f64, acceleration_cut: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub n_participants: usize,
    pub start_date: NaiveDate,
    pub days: usize,
    pub polls: PollConfig,
    /// Probability that an issued poll is answered.
    pub response_rate: f64,
    pub max_response_delay_minutes: i64,
    pub observations_per_poll: usize,
    /// Observations fall within this many minutes of the answer.
    pub observation_spread_minutes: i64,
    pub sensors: SensorProcess,
    pub location: LocationConfig,
    pub true_beta_happiness: Coefficients,
    pub true_beta_activation: Coefficients,
    pub true_sigma_u2_happiness: f64,
    pub true_sigma_u2_activation: f64,
    /// Rescale the realized intercepts so their mean is 0 and their mean
    /// square equals the configured variance exactly.
    pub moment_matched_intercepts: bool,
    pub labels: LabelMode,
    /// Share of observations without a GPS fix.
    pub gps_missing_rate: f64,
    /// Share of observations with an implausibly low heart rate.
    pub glitch_rate: f64,
    pub factors_missing_rate: f64,
    pub utc_offset_minutes: i32,
    pub holidays: HolidayCalendar,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        use Variable::*;
        CohortConfig {
            n_participants: 17,
            start_date: NaiveDate::from_ymd_opt(2016, 12, 19).expect("valid date"),
            days: 46,
            polls: PollConfig::default(),
            response_rate: 0.9,
            max_response_delay_minutes: 10,
            observations_per_poll: 3,
            observation_spread_minutes: 20,
            sensors: SensorProcess::default(),
            location: LocationConfig::default(),
            true_beta_happiness: Coefficients::new(
                1.4,
                &[
                    (AvgBpm, -0.02),
                    (LightLevel, -0.35),
                    (Acceleration, 0.25),
                    (Vmc, 0.0005),
                    (Agreeableness, 0.02),
                ],
            ),
            true_beta_activation: Coefficients::new(
                0.0,
                &[
                    (AvgBpm, -0.015),
                    (LightLevel, -0.2),
                    (Acceleration, 0.8),
                    (Vmc, 0.001),
                    (Extraversion, 0.015),
                ],
            ),
            true_sigma_u2_happiness: 0.85,
            true_sigma_u2_activation: 2.38,
            moment_matched_intercepts: false,
            labels: LabelMode::Logistic,
            gps_missing_rate: 0.03,
            glitch_rate: 0.005,
            factors_missing_rate: 0.0,
            utc_offset_minutes: -300,
            holidays: HolidayCalendar::winter_2016(),
            seed: 0,
        }
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")))
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        self.polls.validate()?;
        if self.n_participants == 0 || self.days == 0 {
            return Err(Error::Config("a cohort needs participants and days".into()));
        }
        if self.observations_per_poll == 0 {
            return Err(Error::Config("observations_per_poll must be positive".into()));
        }
        if self.location.clusters_per_participant == 0 {
            return Err(Error::Config("each participant needs a location cluster".into()));
        }
        for (name, v) in [
            ("true_sigma_u2_happiness", self.true_sigma_u2_happiness),
            ("true_sigma_u2_activation", self.true_sigma_u2_activation),
            ("bpm_noise_sd", self.sensors.bpm_noise_sd),
            ("light_noise_sd", self.sensors.light_noise_sd),
            ("acceleration_noise_sd", self.sensors.acceleration_noise_sd),
            ("vmc_noise_sd", self.sensors.vmc_noise_sd),
            ("spread_deg", self.location.spread_deg),
            ("jitter_deg", self.location.jitter_deg),
            ("shift_sd_happiness", self.location.shift_sd_happiness),
            ("shift_sd_activation", self.location.shift_sd_activation),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a non-negative number")));
            }
        }
        check_probability("response_rate", self.response_rate)?;
        check_probability("gps_missing_rate", self.gps_missing_rate)?;
        check_probability("glitch_rate", self.glitch_rate)?;
        check_probability("factors_missing_rate", self.factors_missing_rate)?;
        check_probability("movement_probability", self.sensors.movement_probability)?;
        if self.sensors.bpm_floor >= self.sensors.bpm_ceiling {
            return Err(Error::Config("bpm_floor must be below bpm_ceiling".into()));
        }
        if self.max_response_delay_minutes < 0 || self.max_response_delay_minutes >= self.polls.ttl_minutes {
            return Err(Error::Config("responses must arrive before the poll expires".into()));
        }
        if FixedOffset::east_opt(self.utc_offset_minutes * 60).is_none() {
            return Err(Error::Config("utc_offset_minutes out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantTruth {
    pub id: String,
    pub intercept_happiness: f64,
    pub intercept_activation: f64,
    pub clusters: Vec<LocationCluster>,
}

/// The exact generating parameters of a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub beta_happiness: Coefficients,
    pub beta_activation: Coefficients,
    pub sigma_u2_happiness: f64,
    pub sigma_u2_activation: f64,
    pub icc_happiness: f64,
    pub icc_activation: f64,
    pub participants: Vec<ParticipantTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub participants: Vec<Participant>,
    pub observations: Vec<Observation>,
    pub responses: Vec<MoodResponse>,
    pub truth: GroundTruth,
}

// Per-participant stream purposes.
const STREAM_TRUTH: u64 = 0;
const STREAM_ATTRIBUTES: u64 = 1;
const STREAM_DATA: u64 = 2;
const STREAM_POLLS: u64 = 3;

fn participant_id(i: usize) -> String {
    format!("P{:02}", i + 1)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn moment_match(u: &mut [f64], sigma2: f64) {
    let n = u.len() as f64;
    let mean = u.iter().sum::<f64>() / n;
    u.iter_mut().for_each(|x| *x -= mean);
    let ms = u.iter().map(|x| x * x).sum::<f64>() / n;
    let scale = if ms > 0.0 { (sigma2 / ms).sqrt() } else { 0.0 };
    u.iter_mut().for_each(|x| *x *= scale);
}

/// The generating parameters for `config`. Pure: the same config always
/// yields the same record, and [`generate_cohort`] uses exactly this record.
pub fn ground_truth(config: &CohortConfig) -> Result<GroundTruth> {
    config.validate()?;
    let loc = &config.location;
    let mut u_h = Vec::with_capacity(config.n_participants);
    let mut u_a = Vec::with_capacity(config.n_participants);
    let mut clusters = Vec::with_capacity(config.n_participants);
    for i in 0..config.n_participants {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[i as u64, STREAM_TRUTH]));
        u_h.push(config.true_sigma_u2_happiness.sqrt() * normal(&mut rng));
        u_a.push(config.true_sigma_u2_activation.sqrt() * normal(&mut rng));
        let weights: Vec<f64> = (0..loc.clusters_per_participant)
            .map(|_| rng.random_range(0.5..1.5))
            .collect();
        let total: f64 = weights.iter().sum();
        clusters.push(
            weights
                .iter()
                .map(|w| LocationCluster {
                    latitude: loc.center_latitude + loc.spread_deg * normal(&mut rng),
                    longitude: loc.center_longitude + loc.spread_deg * normal(&mut rng),
                    altitude: 10.0 + 30.0 * normal(&mut rng).abs(),
                    probability: w / total,
                    happiness_shift: loc.shift_sd_happiness * normal(&mut rng),
                    activation_shift: loc.shift_sd_activation * normal(&mut rng),
                })
                .collect::<Vec<_>>(),
        );
    }
    if config.moment_matched_intercepts {
        moment_match(&mut u_h, config.true_sigma_u2_happiness);
        moment_match(&mut u_a, config.true_sigma_u2_activation);
    }
    Ok(GroundTruth {
        seed: config.seed,
        beta_happiness: config.true_beta_happiness.clone(),
        beta_activation: config.true_beta_activation.clone(),
        sigma_u2_happiness: config.true_sigma_u2_happiness,
        sigma_u2_activation: config.true_sigma_u2_activation,
        icc_happiness: icc(config.true_sigma_u2_happiness),
        icc_activation: icc(config.true_sigma_u2_activation),
        participants: clusters
            .into_iter()
            .enumerate()
            .map(|(i, clusters)| ParticipantTruth {
                id: participant_id(i),
                intercept_happiness: u_h[i],
                intercept_activation: u_a[i],
                clusters,
            })
            .collect(),
    })
}

fn draw_participant(i: usize, config: &CohortConfig) -> Participant {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[i as u64, STREAM_ATTRIBUTES]));
    let age = (29.0 + 6.0 * normal(&mut rng)).round().clamp(19.0, 65.0) as u32;
    let gender = if rng.random::<f64>() < 0.3 {
        Gender::Male
    } else {
        Gender::Female
    };
    let weight = (72.0 + 12.0 * normal(&mut rng)).clamp(45.0, 130.0);
    let sportiness = rng.random_range(1..=3u8);
    let mut score = || (50.0 + 10.0 * normal(&mut rng)).clamp(0.0, 100.0);
    let factors = BigFive {
        neuroticism: score(),
        extraversion: score(),
        openness: score(),
        agreeableness: score(),
        conscientiousness: score(),
    };
    let missing = rng.random::<f64>() < config.factors_missing_rate;
    Participant {
        id: participant_id(i),
        age,
        gender,
        weight,
        sportiness,
        factors: (!missing).then_some(factors),
        utc_offset_minutes: config.utc_offset_minutes,
    }
}

fn pick_cluster(clusters: &[LocationCluster], rng: &mut ChaCha8Rng) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (k, c) in clusters.iter().enumerate() {
        acc += c.probability;
        if x < acc {
            return k;
        }
    }
    clusters.len() - 1
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct PollDraw {
    observations: Vec<Observation>,
    response: MoodResponse,
}

fn simulate_poll(
    config: &CohortConfig,
    participant: &Participant,
    truth: &ParticipantTruth,
    answered_at: DateTime<Utc>,
    rng: &mut ChaCha8Rng,
) -> PollDraw {
    let s = &config.sensors;
    let tz = participant.timezone();
    let local = answered_at.with_timezone(&tz);
    let hour = local.hour() as f64 + local.minute() as f64 / 60.0;
    let tau = std::f64::consts::TAU;
    let moving = rng.random::<f64>() < s.movement_probability;
    let bpm_level = s.bpm_mean
        + s.bpm_amplitude * (tau * (hour - 15.0) / 24.0).cos()
        + if moving { s.bpm_activity } else { 0.0 };
    let light_level = s.light_mean
        + s.light_amplitude * (tau * (hour - 13.0) / 24.0).cos()
        + s.light_noise_sd * normal(rng);
    let accel_level = if moving {
        s.acceleration_burst
    } else {
        s.acceleration_rest
    };
    let cluster = &truth.clusters[pick_cluster(&truth.clusters, rng)];

    let spread = config.observation_spread_minutes * 60;
    // Distinct offsets keep (participant, timestamp) unique.
    let slots = (2 * spread + 1) as usize;
    let mut offsets: Vec<i64> = rand::seq::index::sample(rng, slots, config.observations_per_poll.min(slots))
        .into_iter()
        .map(|i| i as i64 - spread)
        .collect();
    offsets.sort_unstable();
    let jitter = Normal::new(0.0, config.location.jitter_deg.max(f64::MIN_POSITIVE)).expect("valid sd");
    let observations: Vec<Observation> = offsets
        .iter()
        .map(|&off| {
            let glitch = rng.random::<f64>() < config.glitch_rate;
            let bpm = if glitch {
                rng.random_range(0.0..DEFAULT_MIN_BPM * 0.5)
            } else {
                (bpm_level + s.bpm_noise_sd * normal(rng)).clamp(s.bpm_floor, s.bpm_ceiling)
            };
            let acceleration = (accel_level + s.acceleration_noise_sd * normal(rng)).max(0.0);
            let vmc = (s.vmc_per_acceleration * acceleration + s.vmc_noise_sd * normal(rng)).clamp(0.0, s.vmc_max);
            let light = (light_level + 0.2 * normal(rng)).clamp(0.0, 5.0);
            let gps = (rng.random::<f64>() >= config.gps_missing_rate).then(|| GpsFix {
                latitude: cluster.latitude + jitter.sample(rng),
                longitude: cluster.longitude + jitter.sample(rng),
                altitude: cluster.altitude + 2.0 * normal(rng),
            });
            Observation {
                participant_id: participant.id.clone(),
                timestamp: answered_at + Duration::seconds(off),
                bpm,
                light_level: light,
                acceleration,
                vmc,
                gps,
            }
        })
        .collect();

    // Sensor means exactly as the feature assembler will compute them.
    let kept: Vec<&Observation> = observations.iter().filter(|o| o.bpm >= DEFAULT_MIN_BPM).collect();
    let mean = |f: fn(&Observation) -> f64, fallback: f64| {
        if kept.is_empty() {
            fallback
        } else {
            kept.iter().map(|o| f(o)).sum::<f64>() / kept.len() as f64
        }
    };
    let row = FeatureRow {
        participant_id: participant.id.clone(),
        timestamp: answered_at,
        label_happiness: false,
        label_activation: false,
        label_mood_state: encode_mood_state(false, false),
        avg_bpm: mean(|o| o.bpm, bpm_level),
        light_level: mean(|o| o.light_level, light_level.clamp(0.0, 5.0)),
        acceleration: mean(|o| o.acceleration, accel_level),
        vmc: mean(|o| o.vmc, s.vmc_per_acceleration * accel_level),
        weekend_holiday: weekend_holiday_flag(answered_at, &config.holidays, tz),
        gender_male: participant.gender.is_male(),
        age: participant.age as f64,
        weight: participant.weight,
        sportiness: participant.sportiness as f64,
        factors: participant.factors,
        gps: None,
    };
    let (happiness, activation) = match config.labels {
        LabelMode::Logistic => {
            let eta_h = config.true_beta_happiness.linear(&row) + truth.intercept_happiness + cluster.happiness_shift;
            let eta_a =
                config.true_beta_activation.linear(&row) + truth.intercept_activation + cluster.activation_shift;
            let h = rng.random::<f64>() < logistic(eta_h);
            let a = rng.random::<f64>() < logistic(eta_a);
            (h, a)
        }
        LabelMode::Threshold {
            light_cut,
            acceleration_cut,
        } => (row.light_level < light_cut, row.acceleration > acceleration_cut),
    };
    PollDraw {
        observations,
        response: MoodResponse {
            participant_id: participant.id.clone(),
            timestamp: answered_at,
            happiness,
            activation,
        },
    }
}

/// Latent linear predictors `(η_happiness, η_activation)` of a feature row
/// without the participant and location terms.
pub fn fixed_linear_predictors(truth: &GroundTruth, row: &FeatureRow) -> (f64, f64) {
    (truth.beta_happiness.linear(row), truth.beta_activation.linear(row))
}

/// Draws a full cohort. Each participant uses its own seed-derived streams,
/// so the result is identical however the work is scheduled.
pub fn generate_cohort(config: &CohortConfig) -> Result<Cohort> {
    let truth = ground_truth(config)?;
    let tz = FixedOffset::east_opt(config.utc_offset_minutes * 60).expect("validated offset");
    let poll_seed = derive_seed(config.seed, &[STREAM_POLLS]);
    let per_participant = (0..config.n_participants)
        .into_par_iter()
        .map(|i| -> Result<(Participant, Vec<Observation>, Vec<MoodResponse>)> {
            let participant = draw_participant(i, config);
            let pt = &truth.participants[i];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[i as u64, STREAM_DATA]));
            let mut observations = Vec::new();
            let mut responses = Vec::new();
            for d in 0..config.days {
                let date = config.start_date + Duration::days(d as i64);
                let plan = plan_daily_polls(&participant.id, date, tz, poll_seed, &config.polls)?;
                for instant in plan.poll_instants {
                    if rng.random::<f64>() >= config.response_rate {
                        continue;
                    }
                    let delay = rng.random_range(0..=config.max_response_delay_minutes * 60);
                    let draw = simulate_poll(config, &participant, pt, instant + Duration::seconds(delay), &mut rng);
                    observations.extend(draw.observations);
                    responses.push(draw.response);
                }
            }
            Ok((participant, observations, responses))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cohort = Cohort {
        participants: Vec::with_capacity(config.n_participants),
        observations: Vec::new(),
        responses: Vec::new(),
        truth,
    };
    for (p, o, r) in per_participant {
        cohort.participants.push(p);
        cohort.observations.extend(o);
        cohort.responses.extend(r);
    }
    Ok(cohort)
}

/// Writes participants, observations and responses in the ingestion schemas,
/// plus `ground_truth.json`.
pub fn export_cohort(cohort: &Cohort, dir: &Path, format: Format) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let ext = format.extension();
    ingest::write_participants(&dir.join(format!("participants.{ext}")), &cohort.participants, format)?;
    ingest::write_observations(&dir.join(format!("observations.{ext}")), &cohort.observations, format)?;
    ingest::write_responses(&dir.join(format!("responses.{ext}")), &cohort.responses, format)?;
    let mut truth = serde_json::to_string_pretty(&cohort.truth)?;
    truth.push('\n');
    std::fs::write(dir.join("ground_truth.json"), truth)?;
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// A bare panel for checking the mixed-model estimator: iid standard-normal
/// predictors, one random intercept per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelConfig {
    pub groups: usize,
    pub per_group: usize,
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub sigma_u2: f64,
    pub moment_matched_intercepts: bool,
}

impl Default for PanelConfig {
    fn default() -> Self {
        PanelConfig {
            groups: 17,
            per_group: 1000,
            intercept: 0.2,
            beta: vec![0.5, -0.45, 0.4],
            sigma_u2: 0.85,
            moment_matched_intercepts: true,
        }
    }
}

/// Draws a panel and returns it with the realized group intercepts.
pub fn simulate_panel(config: &PanelConfig, seed: u64) -> Result<(GroupedData, Vec<f64>)> {
    if config.groups < 2 || config.per_group == 0 {
        return Err(Error::Config("a panel needs two or more non-empty groups".into()));
    }
    if !(config.sigma_u2.is_finite() && config.sigma_u2 >= 0.0) {
        return Err(Error::Config("sigma_u2 must be a non-negative number".into()));
    }
    let p = config.beta.len();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STREAM_TRUTH]));
    let mut u: Vec<f64> = (0..config.groups)
        .map(|_| config.sigma_u2.sqrt() * normal(&mut rng))
        .collect();
    if config.moment_matched_intercepts {
        moment_match(&mut u, config.sigma_u2);
    }
    let groups = (0..config.groups)
        .map(|g| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[g as u64, STREAM_DATA]));
            let mut x = Vec::with_capacity(config.per_group * p);
            let mut y = Vec::with_capacity(config.per_group);
            for _ in 0..config.per_group {
                let mut eta = config.intercept + u[g];
                for b in &config.beta {
                    let v = normal(&mut rng);
                    eta += b * v;
                    x.push(v);
                }
                y.push(rng.random::<f64>() < logistic(eta));
            }
            Group::new(format!("G{:02}", g + 1), p, x, y)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        GroupedData {
            predictors: (1..=p).map(|j| format!("x{j}")).collect(),
            groups,
        },
        u,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{assemble_feature_rows, clean_observations, DEFAULT_JOIN_WINDOW_MINUTES};

    fn small() -> CohortConfig {
        CohortConfig {
            n_participants: 6,
            days: 10,
            seed: 42,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_sized() {
        let a = generate_cohort(&small()).unwrap();
        let b = generate_cohort(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.participants.len(), 6);
        let per_day = a.responses.len() as f64 / 60.0;
        assert!((3.0..=7.0).contains(&per_day), "{per_day}");
        let c = generate_cohort(&CohortConfig { seed: 43, ..small() }).unwrap();
        assert_ne!(a.responses, c.responses);
    }

    #[test]
    fn default_cohort_size_follows_the_protocol() {
        let cfg = CohortConfig::default();
        let truth = ground_truth(&cfg).unwrap();
        assert_eq!(truth.sigma_u2_happiness, 0.85);
        assert!((truth.icc_happiness - 0.205).abs() < 1e-3);
        assert!(truth.beta_happiness.slope(Variable::LightLevel) < 0.0);
        assert!(truth.beta_happiness.slope(Variable::AvgBpm) < 0.0);
        assert!(truth.beta_happiness.slope(Variable::Agreeableness) > 0.0);
        let cohort = generate_cohort(&cfg).unwrap();
        let n = cohort.responses.len();
        // 17 x 46 days x 4-7 polls at a 90% response rate.
        assert!((17 * 46 * 4 * 8 / 10..=17 * 46 * 7).contains(&n), "{n}");
    }

    #[test]
    fn truth_is_pure_and_consistent() {
        let cfg = small();
        let t = ground_truth(&cfg).unwrap();
        assert_eq!(t, ground_truth(&cfg).unwrap());
        for p in &t.participants {
            let total: f64 = p.clusters.iter().map(|c| c.probability).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert_eq!(generate_cohort(&cfg).unwrap().truth, t);
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<GroundTruth>(&json).unwrap(), t);
    }

    #[test]
    fn moment_matching_hits_the_variance() {
        let cfg = CohortConfig {
            moment_matched_intercepts: true,
            ..small()
        };
        let t = ground_truth(&cfg).unwrap();
        let u: Vec<f64> = t.participants.iter().map(|p| p.intercept_happiness).collect();
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        let ms = u.iter().map(|x| x * x).sum::<f64>() / u.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((ms - 0.85).abs() < 1e-12);
    }

    #[test]
    fn sensors_respect_envelopes_and_cleaning_loss_is_small() {
        let cfg = small();
        let cohort = generate_cohort(&cfg).unwrap();
        let s = &cfg.sensors;
        for o in &cohort.observations {
            o.validate().unwrap();
            assert!((0.0..=5.0).contains(&o.light_level));
            assert!(o.vmc >= 0.0 && o.vmc <= s.vmc_max);
            if o.bpm >= DEFAULT_MIN_BPM {
                assert!(o.bpm >= s.bpm_floor && o.bpm <= s.bpm_ceiling);
            }
        }
        let n = cohort.observations.len();
        let cleaned = clean_observations(cohort.observations, DEFAULT_MIN_BPM);
        assert!((cleaned.removed as f64) < 0.01 * n as f64, "{} of {n}", cleaned.removed);
        let none = CohortConfig { glitch_rate: 0.0, ..small() };
        let c2 = generate_cohort(&none).unwrap();
        assert_eq!(clean_observations(c2.observations, DEFAULT_MIN_BPM).removed, 0);
    }

    #[test]
    fn outcome_rate_matches_mean_probability() {
        let cfg = CohortConfig {
            n_participants: 60,
            days: 50,
            seed: 3,
            ..Default::default()
        };
        let cohort = generate_cohort(&cfg).unwrap();
        let cleaned = clean_observations(cohort.observations.clone(), DEFAULT_MIN_BPM);
        let rows = assemble_feature_rows(
            &cohort.responses,
            &cleaned.kept,
            &cohort.participants,
            &cfg.holidays,
            Duration::minutes(DEFAULT_JOIN_WINDOW_MINUTES),
        )
        .rows;
        assert!(rows.len() >= 10_000);
        // Expected rate: average logistic(η) over the rows, integrating the
        // location shift over each participant's clusters.
        let truth = &cohort.truth;
        let by_id: BTreeMap<&str, &ParticipantTruth> =
            truth.participants.iter().map(|p| (p.id.as_str(), p)).collect();
        let mut expected = 0.0;
        let mut observed = 0.0;
        for r in &rows {
            let pt = by_id[r.participant_id.as_str()];
            let (eh, _) = fixed_linear_predictors(truth, r);
            expected += pt
                .clusters
                .iter()
                .map(|c| c.probability * logistic(eh + pt.intercept_happiness + c.happiness_shift))
                .sum::<f64>();
            observed += r.label_happiness as u8 as f64;
        }
        let (e, o) = (expected / rows.len() as f64, observed / rows.len() as f64);
        assert!((e - o).abs() < 0.02, "expected {e}, observed {o}");
    }

    #[test]
    fn zero_variance_gives_binomial_spread() {
        // Null on every between-participant source.
        let cfg = CohortConfig {
            n_participants: 30,
            days: 30,
            true_sigma_u2_happiness: 0.0,
            true_beta_happiness: Coefficients::new(0.3, &[]),
            location: LocationConfig {
                shift_sd_happiness: 0.0,
                ..Default::default()
            },
            seed: 11,
            ..Default::default()
        };
        let cohort = generate_cohort(&cfg).unwrap();
        let mut rates = Vec::new();
        let mut noise = 0.0;
        for p in &cohort.participants {
            let ys: Vec<f64> = cohort
                .responses
                .iter()
                .filter(|r| r.participant_id == p.id)
                .map(|r| r.happiness as u8 as f64)
                .collect();
            let m = ys.iter().sum::<f64>() / ys.len() as f64;
            noise += m * (1.0 - m) / ys.len() as f64;
            rates.push(m);
        }
        let k = rates.len() as f64;
        let mean = rates.iter().sum::<f64>() / k;
        let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let floor = noise / k;
        assert!(var < 2.0 * floor, "between variance {var} vs binomial floor {floor}");
    }

    #[test]
    fn threshold_labels_follow_sensor_means() {
        let cfg = CohortConfig {
            labels: LabelMode::Threshold {
                light_cut: 2.5,
                acceleration_cut: 0.7,
            },
            ..small()
        };
        let cohort = generate_cohort(&cfg).unwrap();
        let cleaned = clean_observations(cohort.observations, DEFAULT_MIN_BPM);
        let rows = assemble_feature_rows(
            &cohort.responses,
            &cleaned.kept,
            &cohort.participants,
            &cfg.holidays,
            Duration::minutes(DEFAULT_JOIN_WINDOW_MINUTES),
        )
        .rows;
        for r in &rows {
            assert_eq!(r.label_happiness, r.light_level < 2.5);
            assert_eq!(r.label_activation, r.acceleration > 0.7);
        }
    }

    #[test]
    fn panel_shape_and_intercepts() {
        let (data, u) = simulate_panel(&PanelConfig::default(), 1).unwrap();
        assert_eq!(data.n_groups(), 17);
        assert_eq!(data.n_obs(), 17_000);
        let ms = u.iter().map(|x| x * x).sum::<f64>() / u.len() as f64;
        assert!((ms - 0.85).abs() < 1e-12);
        assert_eq!(simulate_panel(&PanelConfig::default(), 1).unwrap().1, u);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(ground_truth(&CohortConfig { true_sigma_u2_happiness: -1.0, ..small() }).is_err());
        assert!(ground_truth(&CohortConfig { response_rate: 1.5, ..small() }).is_err());
        assert!(ground_truth(&CohortConfig { n_participants: 0, ..small() }).is_err());
    }
}
