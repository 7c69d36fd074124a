//! What happens after a claim: progress reports, delivery, timed processing
//! at the destination, routing activation, and crash repair.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::clock::seconds_to_duration;
use crate::domain::{
    advance_step, check_battery, validate_routing, AuditKind, InstancePhase, Job, JobPhase, NewAuditEvent, Pose3,
    Routing, RoutingInstance, Timestamp, Worker, WorkerStatus, Workstation,
};
use crate::fleet::{Change, Fleet, FleetError, Versioned, INSTANCES, JOBS, ROUTINGS, WORKERS, WORKSTATIONS};
use crate::scheduler::{release_station, station_event};
use crate::store::{Filter, StoreError};

/// In-band verdict for worker messages: `status = 1` accepted, `0` rejected
/// with a reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub status: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl Ack {
    pub fn ok() -> Self {
        Self { status: 1, reason: None }
    }

    pub fn reject(reason: impl Into<String>) -> Self {
        Self { status: 0, reason: Some(reason.into()) }
    }

    pub fn is_ok(&self) -> bool {
        self.status == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub key: String,
    pub job_id: String,
    pub phase: JobPhase,
    #[serde(default)]
    pub pose: Option<Pose3>,
    #[serde(default)]
    pub battery: Option<f64>,
}

/// Records a worker's progress on its current job. Phases may repeat or
/// skip forward but never go back.
pub fn job_progress(fleet: &Fleet, report: &ProgressReport, now: Timestamp) -> Result<Ack, FleetError> {
    let Some(worker) = fleet.try_load::<Worker>(WORKERS, &report.key)? else {
        return Ok(Ack::reject("unknown worker"));
    };
    let Some(job) = fleet.try_load::<Job>(JOBS, &report.job_id)? else {
        return Ok(Ack::reject("unknown job"));
    };
    if job.value.worker_id != report.key || worker.value.current_job.as_deref() != Some(report.job_id.as_str()) {
        return Ok(Ack::reject("job is not held by this worker"));
    }
    if let Some(b) = report.battery {
        if check_battery(b).is_err() {
            return Ok(Ack::reject(format!("battery {b} outside [0, 1]")));
        }
    }

    let regression = fleet.update(JOBS, &report.job_id, |mut j: Job| {
        if report.phase.rank() < j.phase.rank() {
            return Ok(Change::Keep(Some(j.phase)));
        }
        if report.phase == j.phase {
            return Ok(Change::Keep(None));
        }
        j.phase = report.phase;
        Ok(Change::Write(j, vec![], None))
    })?;
    if let Some(current) = regression {
        return Ok(Ack::reject(format!(
            "phase regression {} -> {}",
            enum_str(&current),
            enum_str(&report.phase)
        )));
    }

    if report.phase >= JobPhase::Carrying {
        fleet.update(INSTANCES, &job.value.instance_id, |mut inst: RoutingInstance| {
            if inst.phase != InstancePhase::InTransit || inst.location == report.key {
                return Ok(Change::Keep(()));
            }
            inst.location = report.key.clone();
            Ok(Change::Write(inst, vec![], ()))
        })?;
    }

    fleet.update(WORKERS, &report.key, |mut w: Worker| {
        if let Some(p) = report.pose {
            w.pose = p;
        }
        if let Some(b) = report.battery {
            w.battery = b;
        }
        w.last_seen = now;
        if w.status == WorkerStatus::Assigned {
            w.status = WorkerStatus::Working;
        }
        let event = NewAuditEvent::new(
            AuditKind::WorkerActivity,
            &w.id,
            now,
            json!({
                "action": "progress",
                "job_id": report.job_id,
                "instance_id": job.value.instance_id,
                "step_index": job.value.step_index,
                "phase": report.phase,
                "pose": w.pose,
                "battery": w.battery,
            }),
        );
        Ok(Change::Write(w, vec![event], ()))
    })?;
    Ok(Ack::ok())
}

/// Closes a delivered transport: the part starts processing at the
/// destination and the worker becomes idle. Safe to retry after a crash.
pub fn job_complete(fleet: &Fleet, key: &str, job_id: &str, now: Timestamp) -> Result<Ack, FleetError> {
    let Some(worker) = fleet.try_load::<Worker>(WORKERS, key)? else {
        return Ok(Ack::reject("unknown worker"));
    };
    let Some(job) = fleet.try_load::<Job>(JOBS, job_id)? else {
        return Ok(Ack::reject("unknown job"));
    };
    let job = job.value;
    if job.worker_id != key {
        return Ok(Ack::reject("job belongs to another worker"));
    }
    if worker.value.current_job.as_deref() != Some(job_id) {
        return Ok(Ack::reject("job already completed"));
    }
    let routing: Routing = fleet.load::<Routing>(ROUTINGS, &routing_of(fleet, &job.instance_id)?)?.value;
    let duration = routing.steps.get(job.step_index).map_or(0.0, |s| s.process_duration);

    let started = fleet.update(INSTANCES, &job.instance_id, |mut inst: RoutingInstance| {
        match inst.phase {
            InstancePhase::InTransit if inst.current_step == job.step_index => {}
            InstancePhase::Processing
                if inst.current_step == job.step_index && inst.location == job.destination_station =>
            {
                return Ok(Change::Keep(true));
            }
            _ => return Ok(Change::Keep(false)),
        }
        inst.phase = InstancePhase::Processing;
        inst.location = job.destination_station.clone();
        inst.process_ends_at = Some(now + seconds_to_duration(duration));
        let ws: Workstation = fleet.load::<Workstation>(WORKSTATIONS, &job.destination_station)?.value;
        let event = station_event(&ws, "processing_started", now, json!({
            "instance_id": inst.id,
            "step_index": inst.current_step,
            "job_id": job.id,
            "worker_id": key,
            "process_ends_at": inst.process_ends_at,
        }));
        Ok(Change::Write(inst, vec![event], true))
    })?;
    if !started {
        return Ok(Ack::reject("instance is no longer in transit for this job"));
    }

    fleet.update(JOBS, job_id, |mut j: Job| {
        if j.phase == JobPhase::Delivered {
            return Ok(Change::Keep(()));
        }
        j.phase = JobPhase::Delivered;
        Ok(Change::Write(j, vec![], ()))
    })?;

    fleet.update(WORKERS, key, |mut w: Worker| {
        if w.current_job.as_deref() != Some(job_id) {
            return Ok(Change::Keep(()));
        }
        w.current_job = None;
        w.status = WorkerStatus::Idle;
        w.pose = job.destination;
        w.last_seen = now;
        let event = NewAuditEvent::new(
            AuditKind::WorkerActivity,
            &w.id,
            now,
            json!({
                "action": "job_complete",
                "job_id": job.id,
                "instance_id": job.instance_id,
                "step_index": job.step_index,
                "phase": JobPhase::Delivered,
                "status": WorkerStatus::Idle,
            }),
        );
        Ok(Change::Write(w, vec![event], ()))
    })?;
    Ok(Ack::ok())
}

fn routing_of(fleet: &Fleet, instance_id: &str) -> Result<String, FleetError> {
    Ok(fleet.load::<RoutingInstance>(INSTANCES, instance_id)?.value.routing_id)
}

/// Finishes every processing step due at `now`, in due-time order. Returns
/// the advanced instance ids.
pub fn advance_processing(fleet: &Fleet, now: Timestamp) -> Result<Vec<String>, FleetError> {
    let mut due: Vec<RoutingInstance> = fleet
        .list::<RoutingInstance>(INSTANCES, &Filter::eq("phase", "processing"))?
        .into_iter()
        .map(|v| v.value)
        .filter(|i| i.process_ends_at.is_none_or(|t| t <= now))
        .collect();
    due.sort_by(|a, b| a.process_ends_at.cmp(&b.process_ends_at).then_with(|| a.id.cmp(&b.id)));

    let mut advanced = Vec::new();
    for inst in due {
        let routing: Routing = fleet.load::<Routing>(ROUTINGS, &inst.routing_id)?.value;
        let step = inst.current_step;
        let station = inst.location.clone();
        let moved = fleet.update(INSTANCES, &inst.id, |current: RoutingInstance| {
            if current.phase != InstancePhase::Processing || current.current_step != step {
                return Ok(Change::Keep(false));
            }
            let next = advance_step(&current, &routing, now)?;
            let mut events = vec![NewAuditEvent::new(
                AuditKind::WorkstationState,
                &station,
                now,
                json!({
                    "action": "processing_finished",
                    "instance_id": next.id,
                    "step_index": step,
                    "next_step": next.current_step,
                    "phase": next.phase,
                }),
            )];
            if next.phase == InstancePhase::Completed {
                events.push(NewAuditEvent::new(
                    AuditKind::RoutingCompleted,
                    &next.id,
                    now,
                    json!({
                        "instance_id": next.id,
                        "routing_id": next.routing_id,
                        "outcome": "completed",
                        "created_at": next.created_at,
                    }),
                ));
            }
            Ok(Change::Write(next, events, true))
        })?;
        if moved {
            release_station(fleet, &station, now, json!({"instance_id": inst.id, "step_index": step, "reason": "processed"}))?;
            advanced.push(inst.id);
        }
    }
    Ok(advanced)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivateRequest {
    pub quantity: i64,
    /// Client-chosen idempotency key; repeating a keyed activation returns
    /// the instances created the first time.
    #[serde(default)]
    pub key: Option<String>,
}

/// Turns a routing into `quantity` production orders waiting at its infeed.
pub fn activate_routing(
    fleet: &Fleet,
    routing_id: &str,
    request: &ActivateRequest,
    now: Timestamp,
) -> Result<Vec<String>, FleetError> {
    if request.quantity < 1 {
        return Err(FleetError::BadRequest(format!("quantity must be at least 1, got {}", request.quantity)));
    }
    let routing: Versioned<Routing> = fleet.load(ROUTINGS, routing_id)?;
    let (types, groups) = known_sets(fleet)?;
    validate_routing(&routing.value, &types, &groups)
        .map_err(|violations| FleetError::InvalidRouting { id: routing_id.into(), violations })?;

    if let Some(key) = &request.key {
        let previous = fleet.store().read_audit(0).into_iter().find(|e| {
            e.kind == AuditKind::RoutingActivated && e.subject_id == routing_id && e.payload["key"] == json!(key)
        });
        if let Some(event) = previous {
            return Ok(serde_json::from_value(event.payload["instance_ids"].clone())?);
        }
    }

    let infeed_type = &routing.value.steps[0].station_type;
    let infeed = fleet
        .list::<Workstation>(WORKSTATIONS, &Filter::eq("station_type", infeed_type.as_str()))?
        .into_iter()
        .map(|v| v.value)
        .find(|ws| !ws.is_down())
        .ok_or_else(|| FleetError::Conflict(format!("no usable {infeed_type} station")))?;

    let ids: Vec<String> = (0..request.quantity).map(|_| fleet.next_id(INSTANCES)).collect();
    for (n, id) in ids.iter().enumerate() {
        let inst = RoutingInstance::activated(id, routing_id, &infeed.id, now);
        let events = if n + 1 == ids.len() {
            vec![NewAuditEvent::new(
                AuditKind::RoutingActivated,
                routing_id,
                now,
                json!({
                    "routing_id": routing_id,
                    "instance_ids": ids,
                    "quantity": request.quantity,
                    "location": infeed.id,
                    "steps": routing.value.steps.len(),
                    "key": request.key,
                }),
            )]
        } else {
            Vec::new()
        };
        fleet.insert(INSTANCES, id, &inst, events)?;
    }
    fleet.update(ROUTINGS, routing_id, |mut r: Routing| {
        if r.active {
            return Ok(Change::Keep(()));
        }
        r.active = true;
        Ok(Change::Write(r, vec![], ()))
    })?;
    Ok(ids)
}

/// Station types and worker groups currently registered.
pub fn known_sets(fleet: &Fleet) -> Result<(BTreeSet<String>, BTreeSet<String>), FleetError> {
    let types = fleet
        .list::<Workstation>(WORKSTATIONS, &Filter::All)?
        .into_iter()
        .map(|v| v.value.station_type)
        .collect();
    let groups = fleet.list::<Worker>(WORKERS, &Filter::All)?.into_iter().map(|v| v.value.worker_group).collect();
    Ok((types, groups))
}

/// Withdraws an instance that is waiting for transport.
pub fn cancel_instance(fleet: &Fleet, instance_id: &str, now: Timestamp) -> Result<RoutingInstance, FleetError> {
    fleet.update(INSTANCES, instance_id, |mut inst: RoutingInstance| {
        if inst.phase != InstancePhase::AwaitingTransport {
            return Err(FleetError::Conflict(format!(
                "instance {} is {} and cannot be cancelled",
                inst.id,
                enum_str(&inst.phase)
            )));
        }
        inst.phase = InstancePhase::Cancelled;
        inst.completed_at = Some(now);
        let event = NewAuditEvent::new(
            AuditKind::RoutingCompleted,
            &inst.id,
            now,
            json!({"instance_id": inst.id, "routing_id": inst.routing_id, "outcome": "cancelled", "step_index": inst.current_step}),
        );
        Ok(Change::Write(inst.clone(), vec![event], inst))
    })
}

/// Repairs state left inconsistent by a crash between the document writes
/// of a claim, completion or timer step. Idempotent.
pub fn reconcile(fleet: &Fleet) -> Result<(), FleetError> {
    let now = fleet.now();
    let instances: HashMap<String, RoutingInstance> = fleet
        .list::<RoutingInstance>(INSTANCES, &Filter::All)?
        .into_iter()
        .map(|v| (v.value.id.clone(), v.value))
        .collect();
    let jobs: HashMap<String, Job> =
        fleet.list::<Job>(JOBS, &Filter::All)?.into_iter().map(|v| (v.value.id.clone(), v.value)).collect();

    // a worker's job reference is valid only while its instance is still in
    // transit for that very step
    let live = |job: &Job| {
        instances
            .get(&job.instance_id)
            .is_some_and(|i| i.phase == InstancePhase::InTransit && i.current_step == job.step_index)
    };
    let mut held: HashMap<String, Job> = HashMap::new();
    for Versioned { value: worker, .. } in fleet.list::<Worker>(WORKERS, &Filter::All)? {
        let Some(job_id) = &worker.current_job else { continue };
        match jobs.get(job_id) {
            Some(job) if job.worker_id == worker.id && live(job) => {
                held.insert(job.instance_id.clone(), job.clone());
            }
            _ => {
                fleet.update(WORKERS, &worker.id, |mut w: Worker| {
                    if w.current_job.as_deref() != Some(job_id.as_str()) {
                        return Ok(Change::Keep(()));
                    }
                    w.current_job = None;
                    w.status = WorkerStatus::Idle;
                    let event = NewAuditEvent::new(
                        AuditKind::WorkerActivity,
                        &w.id,
                        now,
                        json!({"action": "recovered", "dropped_job": job_id, "status": WorkerStatus::Idle}),
                    );
                    Ok(Change::Write(w, vec![event], ()))
                })?;
            }
        }
    }

    for job in jobs.values() {
        let bound = held.get(&job.instance_id).is_some_and(|h| h.id == job.id);
        if !bound && job.phase != JobPhase::Delivered {
            match fleet.store().delete(JOBS, &job.id, None) {
                Ok(()) | Err(StoreError::NotFound { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }

    for inst in instances.values() {
        if inst.phase != InstancePhase::InTransit || held.contains_key(&inst.id) {
            continue;
        }
        let source = jobs
            .values()
            .find(|j| j.instance_id == inst.id && j.step_index == inst.current_step)
            .map(|j| j.source_station.clone());
        fleet.update(INSTANCES, &inst.id, |mut i: RoutingInstance| {
            if i.phase != InstancePhase::InTransit {
                return Ok(Change::Keep(()));
            }
            i.phase = InstancePhase::AwaitingTransport;
            if let Some(src) = &source {
                i.location = src.clone();
            }
            let event = NewAuditEvent::new(
                AuditKind::WorkerActivity,
                &i.id,
                now,
                json!({"action": "job_reclaimed", "instance_id": i.id, "step_index": i.current_step, "reason": "recovered"}),
            );
            Ok(Change::Write(i, vec![event], ()))
        })?;
    }

    let mut expected: HashMap<String, u32> = HashMap::new();
    for job in held.values() {
        *expected.entry(job.destination_station.clone()).or_default() += 1;
    }
    for inst in instances.values().filter(|i| i.phase == InstancePhase::Processing) {
        *expected.entry(inst.location.clone()).or_default() += 1;
    }
    for Versioned { value: ws, .. } in fleet.list::<Workstation>(WORKSTATIONS, &Filter::All)? {
        let want = expected.get(&ws.id).copied().unwrap_or(0);
        if ws.occupancy == want {
            continue;
        }
        tracing::warn!(station = %ws.id, stored = ws.occupancy, derived = want, "repairing occupancy");
        fleet.update(WORKSTATIONS, &ws.id, |mut s: Workstation| {
            s.occupancy = want;
            s.refresh_state();
            let event = station_event(&s, "recovered", now, json!({}));
            Ok(Change::Write(s, vec![event], ()))
        })?;
    }
    Ok(())
}

/// The serde name of a unit enum variant, e.g. `awaiting_transport`.
pub fn enum_str<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{sim_time, ManualClock};
    use crate::domain::{JobPayload, RoutingStep, INFEED, OUTFEED};
    use crate::fleet::FleetClock;
    use crate::scheduler::{select_next_job, SchedulerConfig};
    use std::sync::Arc;

    fn setup() -> (Fleet, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::at_epoch());
        let fleet = Fleet::in_memory(FleetClock::Manual(clock.clone()), SchedulerConfig::default());
        let now = fleet.now();
        for ws in [
            Workstation::new("IN", INFEED, Pose3::at(0.0, 0.0), 10),
            Workstation::new("M1", "milling", Pose3::at(5.0, 0.0), 1),
            Workstation::new("OUT", OUTFEED, Pose3::at(10.0, 0.0), 10),
        ] {
            fleet.insert(WORKSTATIONS, &ws.id.clone(), &ws, vec![]).unwrap();
        }
        let step = |i: usize, ty: &str, d: f64| RoutingStep {
            index: i,
            operation_name: ty.into(),
            station_type: ty.into(),
            worker_group: "PO Movement".into(),
            process_duration: d,
            priority: 0,
        };
        let routing = Routing {
            id: "rt-1".into(),
            part_number: "PN-1".into(),
            customer: "c".into(),
            steps: vec![step(0, INFEED, 0.0), step(1, "milling", 30.0), step(2, OUTFEED, 0.0)],
            active: false,
        };
        fleet.insert(ROUTINGS, "rt-1", &routing, vec![]).unwrap();
        fleet.insert(WORKERS, "w1", &Worker::new("w1", "MIR_robot", "PO Movement", now), vec![]).unwrap();
        (fleet, clock)
    }

    fn activate(fleet: &Fleet, q: i64) -> Vec<String> {
        activate_routing(fleet, "rt-1", &ActivateRequest { quantity: q, key: None }, fleet.now()).unwrap()
    }

    fn progress(fleet: &Fleet, job: &str, phase: JobPhase, battery: Option<f64>) -> Ack {
        let report = ProgressReport { key: "w1".into(), job_id: job.into(), phase, pose: None, battery };
        job_progress(fleet, &report, fleet.now()).unwrap()
    }

    fn instance(fleet: &Fleet, id: &str) -> RoutingInstance {
        fleet.load::<RoutingInstance>(INSTANCES, id).unwrap().value
    }

    #[test]
    fn activation_creates_awaiting_instances() {
        let (fleet, _) = setup();
        let ids = activate(&fleet, 3);
        assert_eq!(ids.len(), 3);
        for id in &ids {
            let inst = instance(&fleet, id);
            assert_eq!((inst.current_step, inst.phase, inst.location.as_str()), (0, InstancePhase::AwaitingTransport, "IN"));
        }
        assert!(fleet.load::<Routing>(ROUTINGS, "rt-1").unwrap().value.active);
        assert!(matches!(
            activate_routing(&fleet, "nope", &ActivateRequest { quantity: 1, key: None }, fleet.now()),
            Err(FleetError::NotFound { .. })
        ));
        assert!(matches!(
            activate_routing(&fleet, "rt-1", &ActivateRequest { quantity: 0, key: None }, fleet.now()),
            Err(FleetError::BadRequest(_))
        ));
    }

    #[test]
    fn keyed_activation_is_idempotent() {
        let (fleet, _) = setup();
        let req = ActivateRequest { quantity: 2, key: Some("batch-7".into()) };
        let first = activate_routing(&fleet, "rt-1", &req, fleet.now()).unwrap();
        let again = activate_routing(&fleet, "rt-1", &req, fleet.now()).unwrap();
        assert_eq!(first, again);
        assert_eq!(fleet.list::<RoutingInstance>(INSTANCES, &Filter::All).unwrap().len(), 2);
    }

    #[test]
    fn full_job_lifecycle() {
        let (fleet, clock) = setup();
        let ids = activate(&fleet, 1);
        let payload = select_next_job(&fleet, "w1", fleet.now()).unwrap();
        let job = payload.job.unwrap().job_id;

        assert!(progress(&fleet, &job, JobPhase::EnRouteToSource, Some(0.9)).is_ok());
        assert!(progress(&fleet, &job, JobPhase::Carrying, Some(0.55)).is_ok());
        assert_eq!(instance(&fleet, &ids[0]).location, "w1");
        let back = progress(&fleet, &job, JobPhase::EnRouteToSource, None);
        assert_eq!(back.status, 0);
        assert!(back.reason.unwrap().contains("regression"));
        let w = fleet.load::<Worker>(WORKERS, "w1").unwrap().value;
        assert_eq!((w.battery, w.status), (0.55, WorkerStatus::Working));

        assert!(job_complete(&fleet, "w1", &job, fleet.now()).unwrap().is_ok());
        assert_eq!(job_complete(&fleet, "w1", &job, fleet.now()).unwrap().status, 0);
        let inst = instance(&fleet, &ids[0]);
        assert_eq!(inst.phase, InstancePhase::Processing);
        // step 0 is the pick-up at the infeed; zero processing time
        assert_eq!(advance_processing(&fleet, fleet.now()).unwrap(), ids);
        assert_eq!(instance(&fleet, &ids[0]).phase, InstancePhase::AwaitingTransport);
        assert_eq!(instance(&fleet, &ids[0]).current_step, 1);

        // milling transport then 30 s of processing
        let job = select_next_job(&fleet, "w1", fleet.now()).unwrap().job.unwrap().job_id;
        assert!(job_complete(&fleet, "w1", &job, fleet.now()).unwrap().is_ok());
        clock.set(sim_time(29.0));
        assert!(advance_processing(&fleet, fleet.now()).unwrap().is_empty());
        assert_eq!(fleet.load::<Workstation>(WORKSTATIONS, "M1").unwrap().value.occupancy, 1);
        clock.set(sim_time(30.0));
        assert_eq!(advance_processing(&fleet, fleet.now()).unwrap().len(), 1);
        assert_eq!(fleet.load::<Workstation>(WORKSTATIONS, "M1").unwrap().value.occupancy, 0);

        let job = select_next_job(&fleet, "w1", fleet.now()).unwrap().job.unwrap().job_id;
        assert!(job_complete(&fleet, "w1", &job, fleet.now()).unwrap().is_ok());
        advance_processing(&fleet, fleet.now()).unwrap();
        let inst = instance(&fleet, &ids[0]);
        assert_eq!(inst.phase, InstancePhase::Completed);
        assert_eq!(inst.completed_at, Some(sim_time(30.0)));
        let completed = fleet.store().read_audit(0).into_iter().filter(|e| e.kind == AuditKind::RoutingCompleted).count();
        assert_eq!(completed, 1);
        assert_eq!(select_next_job(&fleet, "w1", fleet.now()).unwrap(), JobPayload::none());
    }

    #[test]
    fn foreign_and_unknown_jobs_are_rejected() {
        let (fleet, _) = setup();
        activate(&fleet, 1);
        fleet.insert(WORKERS, "w2", &Worker::new("w2", "other", "PO Movement", fleet.now()), vec![]).unwrap();
        let job = select_next_job(&fleet, "w1", fleet.now()).unwrap().job.unwrap().job_id;
        assert_eq!(job_complete(&fleet, "w2", &job, fleet.now()).unwrap().status, 0);
        assert_eq!(job_complete(&fleet, "w1", "job-999999", fleet.now()).unwrap().status, 0);
        assert_eq!(job_complete(&fleet, "ghost", &job, fleet.now()).unwrap().status, 0);
        let report = ProgressReport { key: "w2".into(), job_id: job.clone(), phase: JobPhase::Carrying, pose: None, battery: None };
        assert_eq!(job_progress(&fleet, &report, fleet.now()).unwrap().status, 0);
        assert_eq!(progress(&fleet, &job, JobPhase::Carrying, Some(1.5)).status, 0);
    }

    #[test]
    fn cancel_only_waiting_instances() {
        let (fleet, _) = setup();
        let ids = activate(&fleet, 2);
        let cancelled = cancel_instance(&fleet, &ids[1], fleet.now()).unwrap();
        assert_eq!(cancelled.phase, InstancePhase::Cancelled);
        assert!(matches!(cancel_instance(&fleet, &ids[1], fleet.now()), Err(FleetError::Conflict(_))));
        select_next_job(&fleet, "w1", fleet.now()).unwrap();
        assert!(matches!(cancel_instance(&fleet, &ids[0], fleet.now()), Err(FleetError::Conflict(_))));
    }

    #[test]
    fn reconcile_repairs_half_finished_claim() {
        let (fleet, _) = setup();
        let ids = activate(&fleet, 1);
        // simulate a crash right after the instance CAS and reservation
        let mut inst = instance(&fleet, &ids[0]);
        let v = fleet.load::<RoutingInstance>(INSTANCES, &ids[0]).unwrap().version;
        inst.phase = InstancePhase::InTransit;
        fleet.replace(INSTANCES, &inst.id, &inst, v, vec![]).unwrap();
        fleet
            .update(WORKSTATIONS, "IN", |mut ws: Workstation| {
                ws.reserve().unwrap();
                Ok(Change::Write(ws, vec![], ()))
            })
            .unwrap();
        reconcile(&fleet).unwrap();
        assert_eq!(instance(&fleet, &ids[0]).phase, InstancePhase::AwaitingTransport);
        assert_eq!(fleet.load::<Workstation>(WORKSTATIONS, "IN").unwrap().value.occupancy, 0);
        assert!(select_next_job(&fleet, "w1", fleet.now()).unwrap().is_assigned());
        // a consistent world is left alone
        let before = fleet.store().audit_len();
        reconcile(&fleet).unwrap();
        assert_eq!(fleet.store().audit_len(), before);
    }

    #[test]
    fn complete_resumes_after_partial_write() {
        let (fleet, _) = setup();
        let ids = activate(&fleet, 1);
        let job = select_next_job(&fleet, "w1", fleet.now()).unwrap().job.unwrap().job_id;
        // first write of completion landed, then the process died
        fleet
            .update(INSTANCES, &ids[0], |mut i: RoutingInstance| {
                i.phase = InstancePhase::Processing;
                i.location = "IN".into();
                i.process_ends_at = Some(fleet.now());
                Ok(Change::Write(i, vec![], ()))
            })
            .unwrap();
        assert!(job_complete(&fleet, "w1", &job, fleet.now()).unwrap().is_ok());
        let w = fleet.load::<Worker>(WORKERS, "w1").unwrap().value;
        assert_eq!((w.current_job, w.status), (None, WorkerStatus::Idle));
    }
}
