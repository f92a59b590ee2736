//! Experience-sampling schedule and the poll lifecycle.
//!
//! A participant is polled between four and seven times a day at random
//! instants inside a local waking window. Each poll starts pending and ends
//! either answered (exactly once) or expired.

use std::fmt;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, NaiveTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MoodResponse, Quadrant};
use crate::seed::{derive_seed, str_key};

pub const MIN_DAILY_POLLS: usize = 4;
pub const MAX_DAILY_POLLS: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PollConfig {
    /// Local time of the first admissible poll.
    pub window_start: NaiveTime,
    /// Local time of the last admissible poll.
    pub window_end: NaiveTime,
    /// Minimum spacing between consecutive polls, in minutes.
    pub min_gap_minutes: i64,
    /// Pending polls older than this many minutes expire.
    pub ttl_minutes: i64,
}

impl Default for PollConfig {
    fn default() -> Self {
        PollConfig {
            window_start: NaiveTime::from_hms_opt(8, 0, 0).unwrap(),
            window_end: NaiveTime::from_hms_opt(22, 0, 0).unwrap(),
            min_gap_minutes: 90,
            ttl_minutes: 60,
        }
    }
}

impl PollConfig {
    pub fn min_gap(&self) -> Duration {
        Duration::minutes(self.min_gap_minutes)
    }

    pub fn ttl(&self) -> Duration {
        Duration::minutes(self.ttl_minutes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_gap_minutes < 0 {
            return Err(Error::Config("min_gap must be non-negative".into()));
        }
        if self.ttl_minutes <= 0 {
            return Err(Error::Config("poll ttl must be positive".into()));
        }
        if self.window_end <= self.window_start {
            return Err(Error::Config("waking window ends before it starts".into()));
        }
        let len = self.window_end - self.window_start;
        if len < self.min_gap() * MAX_DAILY_POLLS as i32 {
            return Err(Error::Config(format!(
                "waking window of {} minutes cannot hold {MAX_DAILY_POLLS} polls {} minutes apart",
                len.num_minutes(),
                self.min_gap_minutes
            )));
        }
        Ok(())
    }
}

/// The poll instants planned for one participant on one local date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollPlan {
    pub participant_id: String,
    pub date: NaiveDate,
    pub poll_instants: Vec<DateTime<Utc>>,
}

/// Plans one day of polls.
///
/// The count is uniform over 4–7. Instants are uniform over the set of
/// configurations that respect the waking window and the minimum gap: `k`
/// sorted uniform offsets are drawn in a window shortened by `(k-1)` gaps and
/// the `i`-th is pushed right by `i` gaps. That has the same distribution as
/// redrawing until the spacing holds, without an unbounded loop. Output is a
/// pure function of the arguments.
pub fn plan_daily_polls(
    participant_id: &str,
    date: NaiveDate,
    timezone: FixedOffset,
    seed: u64,
    config: &PollConfig,
) -> Result<PollPlan> {
    config.validate()?;
    let day_key = date.signed_duration_since(NaiveDate::MIN).num_days() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[str_key(participant_id), day_key]));

    let count = rng.random_range(MIN_DAILY_POLLS..=MAX_DAILY_POLLS);
    // Whole seconds; a zero gap still needs strictly increasing instants.
    let gap = config.min_gap().num_seconds().max(1);
    let span = (config.window_end - config.window_start).num_seconds();
    let slack = span - gap * (count as i64 - 1);
    let mut offsets: Vec<i64> = (0..count).map(|_| rng.random_range(0..=slack)).collect();
    offsets.sort_unstable();

    let start_local = date.and_time(config.window_start);
    let start = timezone
        .from_local_datetime(&start_local)
        .single()
        .expect("fixed offsets are unambiguous")
        .with_timezone(&Utc);
    let poll_instants = offsets
        .iter()
        .enumerate()
        .map(|(i, off)| start + Duration::seconds(off + gap * i as i64))
        .collect();

    Ok(PollPlan {
        participant_id: participant_id.to_string(),
        date,
        poll_instants,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PollStatus {
    Pending,
    Answered,
    Expired,
}

impl fmt::Display for PollStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PollStatus::Pending => "pending",
            PollStatus::Answered => "answered",
            PollStatus::Expired => "expired",
        })
    }
}

#[derive(Deserialize)]
struct PollRecord {
    id: String,
    participant_id: String,
    issued_at: DateTime<Utc>,
    status: PollStatus,
    response: Option<MoodResponse>,
}

/// A single issued poll. Status and response are only reachable through the
/// transition functions, so "answered iff a response is present" always holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PollRecord")]
pub struct Poll {
    pub id: String,
    pub participant_id: String,
    pub issued_at: DateTime<Utc>,
    status: PollStatus,
    response: Option<MoodResponse>,
}

impl TryFrom<PollRecord> for Poll {
    type Error = Error;

    fn try_from(r: PollRecord) -> Result<Self> {
        if (r.status == PollStatus::Answered) != r.response.is_some() {
            return Err(Error::InvalidInput(format!(
                "poll {} is {} but response presence disagrees",
                r.id, r.status
            )));
        }
        Ok(Poll {
            id: r.id,
            participant_id: r.participant_id,
            issued_at: r.issued_at,
            status: r.status,
            response: r.response,
        })
    }
}

impl Poll {
    pub fn issue(
        id: impl Into<String>,
        participant_id: impl Into<String>,
        issued_at: DateTime<Utc>,
    ) -> Self {
        Poll {
            id: id.into(),
            participant_id: participant_id.into(),
            issued_at,
            status: PollStatus::Pending,
            response: None,
        }
    }

    pub fn status(&self) -> PollStatus {
        self.status
    }

    pub fn response(&self) -> Option<&MoodResponse> {
        self.response.as_ref()
    }

    pub fn is_pending(&self) -> bool {
        self.status == PollStatus::Pending
    }

    fn violation(&self) -> Error {
        Error::StateViolation {
            poll_id: self.id.clone(),
            status: self.status.to_string(),
        }
    }

    /// Pending → expired.
    pub fn expire(&self) -> Result<Poll> {
        if !self.is_pending() {
            return Err(self.violation());
        }
        Ok(Poll {
            status: PollStatus::Expired,
            ..self.clone()
        })
    }
}

/// Stable id for the `index`-th planned poll of a day.
pub fn planned_poll_id(participant_id: &str, date: NaiveDate, index: usize) -> String {
    format!("{participant_id}-{date}-{index}")
}

/// Pending → answered with the decoded grid selection.
pub fn record_response(poll: &Poll, quadrant: Quadrant, answered_at: DateTime<Utc>) -> Result<Poll> {
    if !poll.is_pending() {
        return Err(poll.violation());
    }
    if answered_at < poll.issued_at {
        return Err(Error::InvalidInput(format!(
            "poll {} answered at {answered_at} before it was issued at {}",
            poll.id, poll.issued_at
        )));
    }
    Ok(Poll {
        status: PollStatus::Answered,
        response: Some(MoodResponse::from_quadrant(
            poll.participant_id.clone(),
            answered_at,
            quadrant,
        )),
        ..poll.clone()
    })
}

/// Expires every pending poll older than `ttl` at `now`; others are returned
/// unchanged.
pub fn expire_stale_polls(polls: &[Poll], now: DateTime<Utc>, ttl: Duration) -> Vec<Poll> {
    polls
        .iter()
        .map(|p| {
            if p.is_pending() && now - p.issued_at > ttl {
                p.expire().expect("pending poll")
            } else {
                p.clone()
            }
        })
        .collect()
}

/// Earliest pending poll of `participant_id` that is already due at `now`.
pub fn next_pending_poll<'a>(
    polls: &'a [Poll],
    participant_id: &str,
    now: DateTime<Utc>,
) -> Option<&'a Poll> {
    polls
        .iter()
        .filter(|p| p.participant_id == participant_id && p.is_pending() && p.issued_at <= now)
        .min_by_key(|p| (p.issued_at, p.id.as_str()))
}
