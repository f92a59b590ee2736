//! HTTP API for the live polling loop, the dashboard and the reports.
//!
//! Handlers share one [`Store`] behind an `RwLock`: mutations take the write
//! lock, so they are applied one at a time in arrival order, while reads and
//! report snapshots proceed concurrently under the read lock.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Duration, Utc};
use moodsense::ingest::{format_timestamp, observation_from_json, participant_from_json, response_to_json};
use moodsense::maplayer::{build_map_layer, MapFilter};
use moodsense::model::clean_observations;
use moodsense::pipeline::{analyze, prepare, Analysis, PipelineConfig};
use moodsense::sampling::{
    expire_stale_polls, next_pending_poll, plan_daily_polls, planned_poll_id, record_response, Poll, PollConfig,
};
use moodsense::store::Store;
use moodsense::{Error, Quadrant};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::RwLock;

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<RwLock<Store>>,
    pub polls: PollConfig,
    pub pipeline: PipelineConfig,
    pub seed: u64,
    pub clock: Clock,
}

impl AppState {
    pub fn new(store: Store, polls: PollConfig, pipeline: PipelineConfig, seed: u64) -> Self {
        AppState {
            store: Arc::new(RwLock::new(store)),
            polls,
            pipeline,
            seed,
            clock: Arc::new(Utc::now),
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }
}

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, what)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::DuplicateId(_) | Error::StateViolation { .. } => StatusCode::CONFLICT,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::StoreCorrupt { .. } => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/participants", post(post_participant))
        .route("/api/observations", post(post_observations))
        .route("/api/polls/next", get(next_poll))
        .route("/api/polls/{id}/answer", post(answer_poll))
        .route("/api/dashboard", get(dashboard))
        .route("/api/map", get(map))
        .route("/api/reports/{name}", get(report))
        .with_state(state)
}

pub async fn serve(state: AppState, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| anyhow::anyhow!("cannot bind {bind}: {e}"))?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    Many(Vec<Value>),
    One(Value),
}

async fn post_participant(State(state): State<AppState>, Json(body): Json<Value>) -> ApiResult<impl IntoResponse> {
    let p = participant_from_json(body)?;
    let id = p.id.clone();
    state.store.write().await.append_participant(p)?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

async fn post_observations(State(state): State<AppState>, Json(body): Json<OneOrMany>) -> ApiResult<impl IntoResponse> {
    let values = match body {
        OneOrMany::Many(v) => v,
        OneOrMany::One(v) => vec![v],
    };
    let batch = values
        .into_iter()
        .enumerate()
        .map(|(i, v)| observation_from_json(v).map_err(|e| ApiError::from(e).prefixed(i)))
        .collect::<ApiResult<Vec<_>>>()?;
    let accepted = state.store.write().await.append_observations(batch)?;
    Ok((StatusCode::CREATED, Json(json!({ "accepted": accepted }))))
}

impl ApiError {
    fn prefixed(mut self, index: usize) -> Self {
        self.message = format!("record {index}: {}", self.message);
        self
    }
}

#[derive(Deserialize)]
struct ParticipantQuery {
    participant: String,
}

fn poll_json(p: &Poll) -> Value {
    json!({
        "id": p.id,
        "participant_id": p.participant_id,
        "issued_at": format_timestamp(&p.issued_at),
        "status": p.status().to_string(),
    })
}

/// Issues every plan instant of today that has come due and expires pending
/// polls past their time to live.
fn refresh_polls(store: &mut Store, participant_id: &str, state: &AppState, now: DateTime<Utc>) -> ApiResult<()> {
    let tz = store
        .participant(participant_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown participant {participant_id}")))?
        .timezone();
    let today = now.with_timezone(&tz).date_naive();
    let plan = plan_daily_polls(participant_id, today, tz, state.seed, &state.polls)?;
    for (i, at) in plan.poll_instants.iter().enumerate() {
        let id = planned_poll_id(participant_id, today, i);
        if *at <= now && store.poll(&id).is_none() {
            store.put_poll(Poll::issue(id, participant_id, *at))?;
        }
    }
    let pending: Vec<Poll> = store
        .polls()
        .filter(|p| p.participant_id == participant_id && p.is_pending())
        .cloned()
        .collect();
    let refreshed = expire_stale_polls(&pending, now, state.polls.ttl());
    for (before, after) in pending.iter().zip(refreshed) {
        if after.status() != before.status() {
            store.put_poll(after)?;
        }
    }
    Ok(())
}

async fn next_poll(State(state): State<AppState>, Query(q): Query<ParticipantQuery>) -> ApiResult<Json<Value>> {
    let now = (state.clock)();
    let mut store = state.store.write().await;
    refresh_polls(&mut store, &q.participant, &state, now)?;
    let polls: Vec<Poll> = store.polls().cloned().collect();
    Ok(Json(match next_pending_poll(&polls, &q.participant, now) {
        Some(p) => json!({ "status": "due", "poll": poll_json(p) }),
        None => json!({ "status": "no poll due", "poll": null }),
    }))
}

#[derive(Deserialize)]
struct Answer {
    quadrant: String,
}

async fn answer_poll(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(answer): Json<Answer>,
) -> ApiResult<Json<Value>> {
    let quadrant: Quadrant = answer.quadrant.parse()?;
    let now = (state.clock)();
    let mut store = state.store.write().await;
    let poll = store
        .poll(&id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown poll {id}")))?;
    if poll.is_pending() && now - poll.issued_at > state.polls.ttl() {
        let expired = poll.expire()?;
        store.put_poll(expired.clone())?;
        return Err(Error::StateViolation {
            poll_id: id,
            status: expired.status().to_string(),
        }
        .into());
    }
    let answered = record_response(&poll, quadrant, now)?;
    let response = answered.response().expect("answered poll has a response").clone();
    store.append_response(response.clone())?;
    store.put_poll(answered.clone())?;
    Ok(Json(json!({
        "poll": poll_json(&answered),
        "response": response_to_json(&response),
    })))
}

async fn dashboard(State(state): State<AppState>, Query(q): Query<ParticipantQuery>) -> ApiResult<Json<Value>> {
    let store = state.store.read().await;
    let participant = store
        .participant(&q.participant)
        .ok_or_else(|| ApiError::not_found(format!("unknown participant {}", q.participant)))?;
    let mut responses: Vec<_> = store.responses().iter().filter(|r| r.participant_id == q.participant).collect();
    responses.sort_by_key(|r| r.timestamp);
    let mut observations: Vec<_> = store
        .observations()
        .iter()
        .filter(|o| o.participant_id == q.participant)
        .collect();
    observations.sort_by_key(|o| o.timestamp);
    Ok(Json(json!({
        "participant_id": participant.id,
        "factors": participant.factors,
        "moods": responses.iter().map(|r| response_to_json(r)).collect::<Vec<_>>(),
        "sensors": observations
            .iter()
            .map(|o| json!({
                "timestamp": format_timestamp(&o.timestamp),
                "bpm": o.bpm,
                "light_level": o.light_level,
            }))
            .collect::<Vec<_>>(),
    })))
}

#[derive(Deserialize)]
struct MapQuery {
    participant: Option<String>,
    from: Option<String>,
    to: Option<String>,
}

fn parse_bound(s: Option<String>) -> ApiResult<Option<DateTime<Utc>>> {
    s.map(|s| moodsense::ingest::parse_timestamp(&s)).transpose().map_err(ApiError::from)
}

async fn map(State(state): State<AppState>, Query(q): Query<MapQuery>) -> ApiResult<Json<Value>> {
    let filter = MapFilter {
        participant: q.participant,
        from: parse_bound(q.from)?,
        to: parse_bound(q.to)?,
    };
    let store = state.store.read().await;
    let cleaned = clean_observations(store.observations().to_vec(), state.pipeline.min_bpm);
    let layer = build_map_layer(
        store.responses(),
        &cleaned.kept,
        &filter,
        Duration::minutes(state.pipeline.join_window_minutes),
    );
    Ok(Json(layer.to_geojson()))
}

#[derive(Deserialize)]
struct ReportQuery {
    format: Option<String>,
}

async fn report(
    State(state): State<AppState>,
    Path(name): Path<String>,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Response> {
    let analysis: Analysis = name.parse().map_err(|_| ApiError::not_found(format!("unknown report {name}")))?;
    let csv = match q.format.as_deref() {
        None | Some("text") => false,
        Some("csv") => true,
        Some(other) => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                format!("format must be text or csv, got {other}"),
            ))
        }
    };
    let snapshot = state.store.read().await.snapshot();
    let (pipeline, seed) = (state.pipeline.clone(), state.seed);
    let report = tokio::task::spawn_blocking(move || {
        let prepared = prepare(&snapshot, &pipeline)?;
        analyze(&prepared.rows, analysis, &pipeline, seed)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let (body, mime) = if csv {
        (report.csv, "text/csv; charset=utf-8")
    } else {
        (report.text, "text/plain; charset=utf-8")
    };
    Ok(([(header::CONTENT_TYPE, mime)], body).into_response())
}
