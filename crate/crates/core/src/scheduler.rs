//! Task selection for polling workers.
//!
//! A poll walks a fixed decision sequence: unknown worker, held job,
//! battery gate, then rank-and-claim over the eligible transports. Ranking is
//! a total order: priority (higher first), distance from the worker to the
//! pickup (nearer first), instance age (older first), instance id.
//!
//! Claims never take a global lock. The instance document is flipped from
//! `awaiting_transport` to `in_transit` with a compare-and-swap, so of any
//! number of concurrent pollers exactly one wins a given step; losers move on
//! to their next candidate.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::clock::seconds_between;
use crate::domain::{
    pose_distance, AuditKind, InstancePhase, Job, JobPayload, JobPhase, NewAuditEvent, Pose3, Routing,
    RoutingInstance, RoutingStep, Timestamp, Worker, WorkerStatus, Workstation,
};
use crate::fleet::{Change, Fleet, FleetError, Versioned, INSTANCES, JOBS, ROUTINGS, WORKERS, WORKSTATIONS};
use crate::store::Filter;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    /// Workers below this battery fraction get no work.
    pub battery_threshold: f64,
    /// Rank-and-claim passes before a contended poll gives up.
    pub claim_retry_limit: u32,
    /// Seconds of silence after which a worker's job is taken back.
    pub stale_job_timeout: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { battery_threshold: 0.20, claim_retry_limit: 3, stale_job_timeout: 300.0 }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.battery_threshold) {
            return Err(format!("battery_threshold {} outside [0, 1]", self.battery_threshold));
        }
        if self.claim_retry_limit == 0 {
            return Err("claim_retry_limit must be positive".into());
        }
        if !(self.stale_job_timeout.is_finite() && self.stale_job_timeout > 0.0) {
            return Err(format!("stale_job_timeout {} must be positive", self.stale_job_timeout));
        }
        Ok(())
    }
}

/// A transport a given worker could take right now.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateTask {
    pub instance_id: String,
    pub step_index: usize,
    pub priority: i64,
    pub source_station: String,
    pub destination_station: String,
    pub source_pose: Pose3,
    pub destination_pose: Pose3,
    pub created_at: Timestamp,
}

/// Least-loaded usable station of `station_type`, ties broken by id.
pub fn pick_destination<'a>(station_type: &str, stations: &'a [Workstation]) -> Option<&'a Workstation> {
    stations
        .iter()
        .filter(|s| s.station_type == station_type && s.accepts_work())
        .min_by(|a, b| a.occupancy.cmp(&b.occupancy).then_with(|| a.id.cmp(&b.id)))
}

pub fn assign_destination(step: &RoutingStep, fleet: &Fleet) -> Result<Option<String>, FleetError> {
    let stations = load_stations(fleet)?;
    Ok(pick_destination(&step.station_type, &stations).map(|s| s.id.clone()))
}

fn load_stations(fleet: &Fleet) -> Result<Vec<Workstation>, FleetError> {
    Ok(fleet.list::<Workstation>(WORKSTATIONS, &Filter::All)?.into_iter().map(|v| v.value).collect())
}

/// Every awaiting transport whose step matches the worker's group and whose
/// destination pool has a usable station.
pub fn eligible_tasks(worker: &Worker, fleet: &Fleet) -> Result<Vec<CandidateTask>, FleetError> {
    let stations = load_stations(fleet)?;
    let by_id: HashMap<&str, &Workstation> = stations.iter().map(|s| (s.id.as_str(), s)).collect();
    let awaiting: Vec<Versioned<RoutingInstance>> =
        fleet.list(INSTANCES, &Filter::eq("phase", "awaiting_transport"))?;
    let mut routings: HashMap<String, Option<Routing>> = HashMap::new();
    let mut out = Vec::new();
    for Versioned { value: inst, .. } in awaiting {
        if !routings.contains_key(&inst.routing_id) {
            let routing = fleet.try_load::<Routing>(ROUTINGS, &inst.routing_id)?.map(|v| v.value);
            routings.insert(inst.routing_id.clone(), routing);
        }
        let Some(Some(routing)) = routings.get(&inst.routing_id) else { continue };
        let Some(step) = routing.steps.get(inst.current_step) else { continue };
        if step.worker_group != worker.worker_group {
            continue;
        }
        let Some(source) = by_id.get(inst.location.as_str()) else { continue };
        let Some(dest) = pick_destination(&step.station_type, &stations) else { continue };
        out.push(CandidateTask {
            instance_id: inst.id.clone(),
            step_index: inst.current_step,
            priority: step.priority,
            source_station: source.id.clone(),
            destination_station: dest.id.clone(),
            source_pose: source.pose,
            destination_pose: dest.pose,
            created_at: inst.created_at,
        });
    }
    Ok(out)
}

/// The ranking order: `Less` means `a` should be served before `b`.
pub fn compare_candidates(a: &CandidateTask, b: &CandidateTask, worker_pose: &Pose3) -> Ordering {
    b.priority
        .cmp(&a.priority)
        .then_with(|| pose_distance(worker_pose, &a.source_pose).total_cmp(&pose_distance(worker_pose, &b.source_pose)))
        .then_with(|| a.created_at.cmp(&b.created_at))
        .then_with(|| a.instance_id.cmp(&b.instance_id))
        .then_with(|| a.step_index.cmp(&b.step_index))
}

pub fn rank(mut candidates: Vec<CandidateTask>, worker: &Worker) -> Vec<CandidateTask> {
    candidates.sort_by(|a, b| compare_candidates(a, b, &worker.pose));
    candidates
}

enum Claim {
    Won(JobPayload),
    Lost,
    /// A concurrent poll by the same worker claimed first.
    WorkerBusy(JobPayload),
}

/// Answers one poll from `worker_key`. `status = 0` is a normal answer
/// (unknown worker, low battery, nothing claimable); errors are storage faults.
pub fn select_next_job(fleet: &Fleet, worker_key: &str, now: Timestamp) -> Result<JobPayload, FleetError> {
    let cfg = *fleet.config();
    let Some(Versioned { value: worker, .. }) = fleet.try_load::<Worker>(WORKERS, worker_key)? else {
        return Ok(JobPayload::none());
    };

    if let Some(job_id) = &worker.current_job {
        if let Some(job) = fleet.try_load::<Job>(JOBS, job_id)? {
            touch_worker(fleet, worker_key, now, cfg.battery_threshold)?;
            return Ok(job.value.payload());
        }
    }

    if worker.battery < cfg.battery_threshold {
        touch_worker(fleet, worker_key, now, cfg.battery_threshold)?;
        return Ok(JobPayload::none());
    }

    for _ in 0..cfg.claim_retry_limit {
        let ranked = rank(eligible_tasks(&worker, fleet)?, &worker);
        if ranked.is_empty() {
            break;
        }
        for candidate in &ranked {
            match try_claim(fleet, &worker, candidate, now)? {
                Claim::Won(payload) | Claim::WorkerBusy(payload) => return Ok(payload),
                Claim::Lost => continue,
            }
        }
    }
    touch_worker(fleet, worker_key, now, cfg.battery_threshold)?;
    Ok(JobPayload::none())
}

/// Heartbeat for a poll that did not claim: refreshes `last_seen`, clears a
/// dangling job reference and settles status from the battery gate.
fn touch_worker(fleet: &Fleet, worker_key: &str, now: Timestamp, threshold: f64) -> Result<(), FleetError> {
    fleet.update(WORKERS, worker_key, |mut w: Worker| {
        let before = w.status;
        if let Some(job_id) = &w.current_job {
            if fleet.try_load::<Job>(JOBS, job_id)?.is_none() {
                w.current_job = None;
            }
        }
        if w.current_job.is_none() {
            w.status = if w.battery < threshold { WorkerStatus::Charging } else { WorkerStatus::Idle };
        }
        w.last_seen = now;
        let events = if w.status != before {
            vec![NewAuditEvent::new(
                AuditKind::WorkerActivity,
                &w.id,
                now,
                json!({"action": "status", "status": w.status, "previous": before, "battery": w.battery}),
            )]
        } else {
            Vec::new()
        };
        Ok(Change::Write(w, events, ()))
    })
}

fn try_claim(fleet: &Fleet, worker: &Worker, cand: &CandidateTask, now: Timestamp) -> Result<Claim, FleetError> {
    let Some(inst) = fleet.try_load::<RoutingInstance>(INSTANCES, &cand.instance_id)? else {
        return Ok(Claim::Lost);
    };
    if inst.value.phase != InstancePhase::AwaitingTransport || inst.value.current_step != cand.step_index {
        return Ok(Claim::Lost);
    }
    let routing: Routing = fleet.load::<Routing>(ROUTINGS, &inst.value.routing_id)?.value;
    let Some(step) = routing.steps.get(cand.step_index) else { return Ok(Claim::Lost) };

    let mut claimed = inst.value.clone();
    claimed.phase = InstancePhase::InTransit;
    let claimed_version = match fleet.replace(INSTANCES, &claimed.id, &claimed, inst.version, vec![]) {
        Ok(v) => v,
        Err(e) if e.is_conflict() => return Ok(Claim::Lost),
        Err(e) => return Err(e),
    };

    let job_id = fleet.next_id(JOBS);
    let reserved = reserve_station(fleet, &cand.destination_station, cand, &job_id, now);
    match reserved {
        Ok(true) => {}
        Ok(false) => {
            revert_claim(fleet, &claimed, claimed_version, inst.value.phase)?;
            return Ok(Claim::Lost);
        }
        Err(e) => {
            revert_claim(fleet, &claimed, claimed_version, inst.value.phase)?;
            return Err(e);
        }
    }

    let job = Job {
        id: job_id.clone(),
        worker_id: worker.id.clone(),
        instance_id: claimed.id.clone(),
        step_index: cand.step_index,
        source: cand.source_pose,
        destination: cand.destination_pose,
        source_station: cand.source_station.clone(),
        destination_station: cand.destination_station.clone(),
        assigned_at: now,
        phase: JobPhase::Assigned,
        operation_name: step.operation_name.clone(),
        part_number: routing.part_number.clone(),
    };
    let bind = fleet.insert(JOBS, &job.id, &job, vec![]).and_then(|_| {
        let assigned = NewAuditEvent::new(
            AuditKind::TaskAssigned,
            &worker.id,
            now,
            json!({
                "job_id": job.id,
                "worker_id": worker.id,
                "instance_id": job.instance_id,
                "routing_id": routing.id,
                "step_index": job.step_index,
                "priority": step.priority,
                "source_station": job.source_station,
                "destination_station": job.destination_station,
            }),
        );
        fleet.update(WORKERS, &worker.id, |mut w: Worker| {
            if let Some(existing) = &w.current_job {
                return Ok(Change::Keep(Some(existing.clone())));
            }
            w.current_job = Some(job.id.clone());
            w.status = WorkerStatus::Assigned;
            w.last_seen = now;
            Ok(Change::Write(w, vec![assigned.clone()], None))
        })
    });
    match bind {
        Ok(None) => Ok(Claim::Won(job.payload())),
        Ok(Some(existing)) => {
            undo_job(fleet, &job, &claimed, claimed_version, now)?;
            let payload = fleet
                .try_load::<Job>(JOBS, &existing)?
                .map(|j| j.value.payload())
                .unwrap_or_else(JobPayload::none);
            Ok(Claim::WorkerBusy(payload))
        }
        Err(e) => {
            undo_job(fleet, &job, &claimed, claimed_version, now)?;
            Err(e)
        }
    }
}

fn reserve_station(
    fleet: &Fleet,
    station_id: &str,
    cand: &CandidateTask,
    job_id: &str,
    now: Timestamp,
) -> Result<bool, FleetError> {
    fleet.update(WORKSTATIONS, station_id, |mut ws: Workstation| {
        if ws.reserve().is_err() {
            return Ok(Change::Keep(false));
        }
        let event = station_event(&ws, "reserved", now, json!({
            "instance_id": cand.instance_id,
            "step_index": cand.step_index,
            "job_id": job_id,
        }));
        Ok(Change::Write(ws, vec![event], true))
    })
}

/// Gives back one reserved slot.
pub(crate) fn release_station(
    fleet: &Fleet,
    station_id: &str,
    now: Timestamp,
    detail: serde_json::Value,
) -> Result<(), FleetError> {
    fleet.update(WORKSTATIONS, station_id, |mut ws: Workstation| {
        if ws.occupancy == 0 {
            return Ok(Change::Keep(()));
        }
        ws.release();
        let event = station_event(&ws, "released", now, detail.clone());
        Ok(Change::Write(ws, vec![event], ()))
    })
}

/// `workstation_state` event carrying the station's occupancy after a change.
pub(crate) fn station_event(ws: &Workstation, action: &str, now: Timestamp, detail: serde_json::Value) -> NewAuditEvent {
    let mut payload = json!({
        "action": action,
        "occupancy": ws.occupancy,
        "capacity": ws.capacity,
        "state": ws.state,
    });
    if let (Some(map), serde_json::Value::Object(extra)) = (payload.as_object_mut(), detail) {
        map.extend(extra);
    }
    NewAuditEvent::new(AuditKind::WorkstationState, &ws.id, now, payload)
}

fn revert_claim(fleet: &Fleet, claimed: &RoutingInstance, version: u64, phase: InstancePhase) -> Result<(), FleetError> {
    let mut back = claimed.clone();
    back.phase = phase;
    fleet.replace(INSTANCES, &back.id, &back, version, vec![])?;
    Ok(())
}

fn undo_job(fleet: &Fleet, job: &Job, claimed: &RoutingInstance, version: u64, now: Timestamp) -> Result<(), FleetError> {
    match fleet.store().delete(JOBS, &job.id, None) {
        Ok(()) | Err(crate::store::StoreError::NotFound { .. }) => {}
        Err(e) => return Err(e.into()),
    }
    release_station(
        fleet,
        &job.destination_station,
        now,
        json!({"instance_id": job.instance_id, "step_index": job.step_index, "job_id": job.id, "reason": "claim_aborted"}),
    )?;
    revert_claim(fleet, claimed, version, InstancePhase::AwaitingTransport)
}

/// Takes jobs back from workers silent for longer than the stale timeout.
/// Their instances become selectable again and the workers go offline.
pub fn reclaim_stale_jobs(fleet: &Fleet, now: Timestamp) -> Result<Vec<String>, FleetError> {
    let timeout = fleet.config().stale_job_timeout;
    let holders: Vec<Versioned<Worker>> = fleet.list(WORKERS, &Filter::ne("current_job", serde_json::Value::Null))?;
    let mut reclaimed = Vec::new();
    for Versioned { value: worker, .. } in holders {
        if seconds_between(worker.last_seen, now) <= timeout {
            continue;
        }
        let Some(job_id) = worker.current_job.clone() else { continue };
        let taken = fleet.update(WORKERS, &worker.id, |mut w: Worker| {
            let still_stale = seconds_between(w.last_seen, now) > timeout;
            if w.current_job.as_deref() != Some(job_id.as_str()) || !still_stale {
                return Ok(Change::Keep(false));
            }
            let previous = w.status;
            w.current_job = None;
            w.status = WorkerStatus::Offline;
            let event = NewAuditEvent::new(
                AuditKind::WorkerActivity,
                &w.id,
                now,
                json!({"action": "status", "status": WorkerStatus::Offline, "previous": previous, "reclaimed_job": job_id}),
            );
            Ok(Change::Write(w, vec![event], true))
        })?;
        if !taken {
            continue;
        }
        if let Some(job) = fleet.try_load::<Job>(JOBS, &job_id)? {
            return_to_pool(fleet, &job.value, now)?;
            match fleet.store().delete(JOBS, &job_id, None) {
                Ok(()) | Err(crate::store::StoreError::NotFound { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
        tracing::info!(worker = %worker.id, job = %job_id, "reclaimed stale job");
        reclaimed.push(job_id);
    }
    Ok(reclaimed)
}

/// Puts a claimed-but-undelivered instance back up for selection and frees
/// its destination slot.
pub(crate) fn return_to_pool(fleet: &Fleet, job: &Job, now: Timestamp) -> Result<(), FleetError> {
    let reverted = fleet.update(INSTANCES, &job.instance_id, |mut inst: RoutingInstance| {
        if inst.phase != InstancePhase::InTransit || inst.current_step != job.step_index {
            return Ok(Change::Keep(false));
        }
        inst.phase = InstancePhase::AwaitingTransport;
        inst.location = job.source_station.clone();
        let event = NewAuditEvent::new(
            AuditKind::WorkerActivity,
            &job.worker_id,
            now,
            json!({
                "action": "job_reclaimed",
                "job_id": job.id,
                "instance_id": inst.id,
                "step_index": inst.current_step,
            }),
        );
        Ok(Change::Write(inst, vec![event], true))
    })?;
    if reverted {
        release_station(
            fleet,
            &job.destination_station,
            now,
            json!({"instance_id": job.instance_id, "step_index": job.step_index, "job_id": job.id, "reason": "reclaimed"}),
        )?;
    }
    Ok(())
}
