//! HTTP surface: the worker pull protocol, operator CRUD, and the audit
//! stream the dashboard listens on.

mod events;
mod server;

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::admin::{self, NewRouting, NewWorker, NewWorkstation, RoutingUpdate, WorkerUpdate, WorkstationUpdate};
use crate::clock::sim_time;
use crate::domain::{AuditEvent, InstancePhase, Job, JobPayload, Routing, RoutingInstance, Timestamp, Worker, Workstation};
use crate::fleet::{Fleet, FleetError, Versioned, COLLECTIONS, INSTANCES, JOBS, ROUTINGS, WORKERS, WORKSTATIONS};
use crate::scheduler::{reclaim_stale_jobs, select_next_job};
use crate::store::{Filter, StoreError};
use crate::workflow::{self, Ack, ActivateRequest, ProgressReport};

pub use server::{open_fleet, Server};

#[derive(Clone)]
pub struct AppState {
    pub fleet: Arc<Fleet>,
    pub org_id: String,
}

pub fn router(fleet: Arc<Fleet>, org_id: impl Into<String>) -> Router {
    let state = AppState { fleet, org_id: org_id.into() };
    Router::new()
        .route("/workerGetNextJob", get(next_job))
        .route("/workerJobProgress", post(job_progress))
        .route("/workerJobComplete", post(job_complete))
        .route("/api/workers", get(list_workers).post(create_worker))
        .route("/api/workers/{id}", get(get_worker).put(update_worker).delete(delete_worker))
        .route("/api/workstations", get(list_workstations).post(create_workstation))
        .route(
            "/api/workstations/{id}",
            get(get_workstation).put(update_workstation).delete(delete_workstation),
        )
        .route("/api/routings", get(list_routings).post(create_routing))
        .route("/api/routings/{id}", get(get_routing).put(update_routing).delete(delete_routing))
        .route("/api/routings/{id}/activate", post(activate))
        .route("/api/instances", get(list_instances))
        .route("/api/instances/{id}", get(get_instance))
        .route("/api/instances/{id}/cancel", post(cancel_instance))
        .route("/api/jobs", get(list_jobs))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/audit", get(audit))
        .route("/api/events", get(events::stream))
        .route("/api/status", get(status))
        .route("/api/sim/clock", post(set_clock))
        .with_state(state)
}

/// Error body: `{"error": message}`, plus `violations` for invalid routings.
#[derive(Debug)]
pub struct ApiError(pub FleetError);

impl From<FleetError> for ApiError {
    fn from(e: FleetError) -> Self {
        ApiError(e)
    }
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match &self.0 {
            FleetError::NotFound { .. } | FleetError::Store(StoreError::NotFound { .. }) => StatusCode::NOT_FOUND,
            e if e.is_conflict() => StatusCode::CONFLICT,
            FleetError::InvalidRouting { .. } | FleetError::Domain(_) => StatusCode::UNPROCESSABLE_ENTITY,
            FleetError::BadRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        let mut body = json!({"error": self.0.to_string()});
        if let FleetError::InvalidRouting { violations, .. } = &self.0 {
            body["violations"] = violations
                .iter()
                .map(|v| {
                    let mut item = serde_json::to_value(v).unwrap_or(Value::Null);
                    item["message"] = json!(v.to_string());
                    item
                })
                .collect();
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(FleetError::BadRequest(msg.into()))
}

#[derive(Debug, Deserialize)]
struct KeyQuery {
    key: Option<String>,
}

async fn next_job(State(app): State<AppState>, Query(q): Query<KeyQuery>) -> ApiResult<Json<JobPayload>> {
    let key = q.key.filter(|k| !k.is_empty()).ok_or_else(|| bad_request("missing key"))?;
    Ok(Json(select_next_job(&app.fleet, &key, app.fleet.now())?))
}

async fn job_progress(State(app): State<AppState>, Json(report): Json<ProgressReport>) -> ApiResult<Json<Ack>> {
    Ok(Json(workflow::job_progress(&app.fleet, &report, app.fleet.now())?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompleteRequest {
    pub key: String,
    pub job_id: String,
}

async fn job_complete(State(app): State<AppState>, Json(req): Json<CompleteRequest>) -> ApiResult<Json<Ack>> {
    Ok(Json(workflow::job_complete(&app.fleet, &req.key, &req.job_id, app.fleet.now())?))
}

#[derive(Debug, Default, Deserialize)]
struct VersionQuery {
    version: Option<u64>,
}

fn created<T: Serialize>(v: Versioned<T>) -> (StatusCode, Json<Versioned<T>>) {
    (StatusCode::CREATED, Json(v))
}

async fn list_workers(State(app): State<AppState>) -> ApiResult<Json<Vec<Versioned<Worker>>>> {
    Ok(Json(app.fleet.list(WORKERS, &Filter::All)?))
}

async fn get_worker(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Versioned<Worker>>> {
    Ok(Json(app.fleet.load(WORKERS, &id)?))
}

async fn create_worker(State(app): State<AppState>, Json(req): Json<NewWorker>) -> ApiResult<impl IntoResponse> {
    Ok(created(admin::create_worker(&app.fleet, &req, app.fleet.now())?))
}

async fn update_worker(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<WorkerUpdate>,
) -> ApiResult<Json<Versioned<Worker>>> {
    Ok(Json(admin::update_worker(&app.fleet, &id, &req, app.fleet.now())?))
}

async fn delete_worker(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<VersionQuery>,
) -> ApiResult<StatusCode> {
    admin::delete_worker(&app.fleet, &id, q.version, app.fleet.now())?;
    Ok(StatusCode::NO_CONTENT)
}

async fn list_workstations(State(app): State<AppState>) -> ApiResult<Json<Vec<Versioned<Workstation>>>> {
    Ok(Json(app.fleet.list(WORKSTATIONS, &Filter::All)?))
}

async fn get_workstation(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Versioned<Workstation>>> {
    Ok(Json(app.fleet.load(WORKSTATIONS, &id)?))
}

async fn create_workstation(State(app): State<AppState>, Json(req): Json<NewWorkstation>) -> ApiResult<impl IntoResponse> {
    Ok(created(admin::create_workstation(&app.fleet, &req, app.fleet.now())?))
}

async fn update_workstation(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<WorkstationUpdate>,
) -> ApiResult<Json<Versioned<Workstation>>> {
    Ok(Json(admin::update_workstation(&app.fleet, &id, &req, app.fleet.now())?))
}

async fn delete_workstation(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<VersionQuery>,
) -> ApiResult<StatusCode> {
    admin::delete_workstation(&app.fleet, &id, q.version, app.fleet.now())?;
    Ok(StatusCode::NO_CONTENT)
}

async fn list_routings(State(app): State<AppState>) -> ApiResult<Json<Vec<Versioned<Routing>>>> {
    Ok(Json(app.fleet.list(ROUTINGS, &Filter::All)?))
}

async fn get_routing(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Versioned<Routing>>> {
    Ok(Json(app.fleet.load(ROUTINGS, &id)?))
}

async fn create_routing(State(app): State<AppState>, Json(req): Json<NewRouting>) -> ApiResult<impl IntoResponse> {
    Ok(created(admin::create_routing(&app.fleet, &req)?))
}

async fn update_routing(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<RoutingUpdate>,
) -> ApiResult<Json<Versioned<Routing>>> {
    Ok(Json(admin::update_routing(&app.fleet, &id, &req)?))
}

async fn delete_routing(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<VersionQuery>,
) -> ApiResult<StatusCode> {
    admin::delete_routing(&app.fleet, &id, q.version)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActivateResponse {
    pub routing_id: String,
    pub instance_ids: Vec<String>,
}

async fn activate(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<ActivateRequest>,
) -> ApiResult<impl IntoResponse> {
    let instance_ids = workflow::activate_routing(&app.fleet, &id, &req, app.fleet.now())?;
    Ok((StatusCode::CREATED, Json(ActivateResponse { routing_id: id, instance_ids })))
}

#[derive(Debug, Default, Deserialize)]
struct InstanceQuery {
    phase: Option<InstancePhase>,
    routing_id: Option<String>,
}

async fn list_instances(
    State(app): State<AppState>,
    Query(q): Query<InstanceQuery>,
) -> ApiResult<Json<Vec<Versioned<RoutingInstance>>>> {
    let mut filter = Filter::All;
    if let Some(phase) = q.phase {
        filter = filter.and(Filter::eq("phase", workflow::enum_str(&phase)));
    }
    if let Some(routing) = q.routing_id {
        filter = filter.and(Filter::eq("routing_id", routing));
    }
    Ok(Json(app.fleet.list(INSTANCES, &filter)?))
}

async fn get_instance(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Versioned<RoutingInstance>>> {
    Ok(Json(app.fleet.load(INSTANCES, &id)?))
}

async fn cancel_instance(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<RoutingInstance>> {
    Ok(Json(workflow::cancel_instance(&app.fleet, &id, app.fleet.now())?))
}

#[derive(Debug, Default, Deserialize)]
struct JobQuery {
    worker_id: Option<String>,
}

async fn list_jobs(State(app): State<AppState>, Query(q): Query<JobQuery>) -> ApiResult<Json<Vec<Versioned<Job>>>> {
    let filter = q.worker_id.map_or(Filter::All, |w| Filter::eq("worker_id", w));
    Ok(Json(app.fleet.list(JOBS, &filter)?))
}

async fn get_job(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Versioned<Job>>> {
    Ok(Json(app.fleet.load(JOBS, &id)?))
}

#[derive(Debug, Default, Deserialize)]
struct AuditQuery {
    #[serde(default)]
    since: u64,
    limit: Option<usize>,
}

async fn audit(State(app): State<AppState>, Query(q): Query<AuditQuery>) -> Json<Vec<AuditEvent>> {
    let mut events = app.fleet.store().read_audit(q.since);
    if let Some(limit) = q.limit {
        events.truncate(limit);
    }
    Json(events)
}

async fn status(State(app): State<AppState>) -> ApiResult<Json<Value>> {
    let mut counts = BTreeMap::new();
    for coll in COLLECTIONS {
        counts.insert(*coll, app.fleet.store().query(coll, &Filter::All).map_err(FleetError::from)?.len());
    }
    let mut phases: BTreeMap<String, usize> = BTreeMap::new();
    for inst in app.fleet.list::<RoutingInstance>(INSTANCES, &Filter::All)? {
        *phases.entry(workflow::enum_str(&inst.value.phase)).or_default() += 1;
    }
    Ok(Json(json!({
        "org_id": app.org_id,
        "now": app.fleet.now(),
        "clock": if app.fleet.manual_clock().is_some() { "manual" } else { "system" },
        "audit_len": app.fleet.store().audit_len(),
        "counts": counts,
        "instances_by_phase": phases,
    })))
}

/// `now` as a timestamp, or `seconds` since the simulation epoch.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClockRequest {
    #[serde(default)]
    pub now: Option<Timestamp>,
    #[serde(default)]
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClockResponse {
    pub now: Timestamp,
    pub advanced: Vec<String>,
    pub reclaimed: Vec<String>,
}

/// Runs the timed transitions due at `now`: processing that has finished,
/// then jobs whose worker went silent.
pub fn run_timers(fleet: &Fleet, now: Timestamp) -> Result<ClockResponse, FleetError> {
    let advanced = workflow::advance_processing(fleet, now)?;
    let reclaimed = reclaim_stale_jobs(fleet, now)?;
    Ok(ClockResponse { now, advanced, reclaimed })
}

async fn set_clock(State(app): State<AppState>, Json(req): Json<ClockRequest>) -> ApiResult<Json<ClockResponse>> {
    let clock = app
        .fleet
        .manual_clock()
        .ok_or_else(|| ApiError(FleetError::Conflict("server runs on the wall clock".into())))?;
    let target = match (req.now, req.seconds) {
        (Some(t), None) => t,
        (None, Some(s)) if s.is_finite() && s >= 0.0 => sim_time(s),
        _ => return Err(bad_request("give exactly one of now or a non-negative seconds")),
    };
    let now = clock.set(target);
    Ok(Json(run_timers(&app.fleet, now)?))
}
