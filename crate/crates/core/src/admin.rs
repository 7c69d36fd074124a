//! Operator-side create, update and delete for workers, workstations and
//! routings. Updates take an optional expected version: with one the write
//! is compare-and-swap, without one it retries until it lands.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::domain::{
    check_battery, validate_routing, AuditKind, NewAuditEvent, Pose3, Routing, RoutingInstance, RoutingStep,
    StationState, Timestamp, Worker, Workstation,
};
use crate::fleet::{Fleet, FleetError, Versioned, INSTANCES, ROUTINGS, WORKERS, WORKSTATIONS};
use crate::scheduler::station_event;
use crate::store::{Filter, StoreError};
use crate::workflow::known_sets;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewWorker {
    pub name: String,
    pub worker_group: String,
    #[serde(default)]
    pub pose: Option<Pose3>,
    #[serde(default)]
    pub battery: Option<f64>,
    #[serde(default)]
    pub address: Option<String>,
    #[serde(default)]
    pub port: Option<u16>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkerUpdate {
    pub version: Option<u64>,
    pub name: Option<String>,
    pub worker_group: Option<String>,
    pub pose: Option<Pose3>,
    pub battery: Option<f64>,
    pub address: Option<String>,
    pub port: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewWorkstation {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub name: Option<String>,
    pub station_type: String,
    pub pose: Pose3,
    pub capacity: u32,
    #[serde(default)]
    pub down: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkstationUpdate {
    pub version: Option<u64>,
    pub name: Option<String>,
    pub station_type: Option<String>,
    pub pose: Option<Pose3>,
    pub capacity: Option<u32>,
    /// Only `free` and `down` can be requested; `occupied` follows from load.
    pub state: Option<StationState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewRouting {
    #[serde(default)]
    pub id: Option<String>,
    pub part_number: String,
    #[serde(default)]
    pub customer: String,
    pub steps: Vec<RoutingStep>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoutingUpdate {
    pub version: Option<u64>,
    pub part_number: Option<String>,
    pub customer: Option<String>,
    pub steps: Option<Vec<RoutingStep>>,
    pub active: Option<bool>,
}

fn check_id(id: &str) -> Result<(), FleetError> {
    let ok = !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(FleetError::BadRequest(format!("id {id:?} must be 1-64 characters of [A-Za-z0-9._-]")))
    }
}

fn non_empty(field: &str, value: &str) -> Result<(), FleetError> {
    if value.trim().is_empty() {
        return Err(FleetError::BadRequest(format!("{field} must not be empty")));
    }
    Ok(())
}

/// Load, apply `f`, write back; see the module docs for version handling.
fn modify<T, F>(fleet: &Fleet, collection: &str, id: &str, version: Option<u64>, mut f: F) -> Result<Versioned<T>, FleetError>
where
    T: Serialize + DeserializeOwned,
    F: FnMut(T) -> Result<(T, Vec<NewAuditEvent>), FleetError>,
{
    loop {
        let current: Versioned<T> = fleet.load(collection, id)?;
        if let Some(v) = version.filter(|v| *v != current.version) {
            return Err(StoreError::VersionConflict {
                collection: collection.into(),
                id: id.into(),
                expected: v,
                found: current.version,
            }
            .into());
        }
        let (next, events) = f(current.value)?;
        match fleet.replace(collection, id, &next, current.version, events) {
            Ok(version) => return Ok(Versioned { version, value: next }),
            Err(e) if version.is_none() && e.is_conflict() => continue,
            Err(e) => return Err(e),
        }
    }
}

fn worker_event(w: &Worker, action: &str, now: Timestamp) -> NewAuditEvent {
    NewAuditEvent::new(
        AuditKind::WorkerActivity,
        &w.id,
        now,
        json!({"action": action, "name": w.name, "worker_group": w.worker_group, "status": w.status}),
    )
}

pub fn create_worker(fleet: &Fleet, req: &NewWorker, now: Timestamp) -> Result<Versioned<Worker>, FleetError> {
    non_empty("name", &req.name)?;
    non_empty("worker_group", &req.worker_group)?;
    let mut worker = Worker::new(fleet.next_id(WORKERS), &req.name, &req.worker_group, now);
    worker.pose = req.pose.unwrap_or(Pose3::ORIGIN);
    worker.battery = req.battery.unwrap_or(1.0);
    worker.address = req.address.clone();
    worker.port = req.port;
    worker.check()?;
    let event = worker_event(&worker, "registered", now);
    let version = fleet.insert(WORKERS, &worker.id, &worker, vec![event])?;
    Ok(Versioned { version, value: worker })
}

pub fn update_worker(fleet: &Fleet, id: &str, req: &WorkerUpdate, now: Timestamp) -> Result<Versioned<Worker>, FleetError> {
    modify(fleet, WORKERS, id, req.version, |mut w: Worker| {
        if let Some(name) = &req.name {
            non_empty("name", name)?;
            w.name = name.clone();
        }
        if let Some(group) = &req.worker_group {
            non_empty("worker_group", group)?;
            w.worker_group = group.clone();
        }
        if let Some(battery) = req.battery {
            check_battery(battery)?;
            w.battery = battery;
        }
        w.pose = req.pose.unwrap_or(w.pose);
        w.address = req.address.clone().or(w.address);
        w.port = req.port.or(w.port);
        let event = worker_event(&w, "updated", now);
        Ok((w, vec![event]))
    })
}

/// Refuses while the worker still holds a job.
pub fn delete_worker(fleet: &Fleet, id: &str, version: Option<u64>, now: Timestamp) -> Result<(), FleetError> {
    let current: Versioned<Worker> = fleet.load(WORKERS, id)?;
    if let Some(job) = &current.value.current_job {
        return Err(FleetError::Conflict(format!("worker {id} still holds job {job}")));
    }
    let event = worker_event(&current.value, "removed", now);
    fleet.store().delete_logged(WORKERS, id, Some(version.unwrap_or(current.version)), vec![event])?;
    Ok(())
}

pub fn create_workstation(fleet: &Fleet, req: &NewWorkstation, now: Timestamp) -> Result<Versioned<Workstation>, FleetError> {
    let id = match &req.id {
        Some(id) => {
            check_id(id)?;
            id.clone()
        }
        None => fleet.next_id(WORKSTATIONS),
    };
    non_empty("station_type", &req.station_type)?;
    let mut ws = Workstation::new(&id, &req.station_type, req.pose, req.capacity);
    if let Some(name) = &req.name {
        ws.name = name.clone();
    }
    ws.set_down(req.down);
    ws.check()?;
    let event = station_event(&ws, "created", now, json!({}));
    let version = fleet.insert(WORKSTATIONS, &id, &ws, vec![event])?;
    Ok(Versioned { version, value: ws })
}

pub fn update_workstation(
    fleet: &Fleet,
    id: &str,
    req: &WorkstationUpdate,
    now: Timestamp,
) -> Result<Versioned<Workstation>, FleetError> {
    if req.state == Some(StationState::Occupied) {
        return Err(FleetError::BadRequest("state can only be set to free or down".into()));
    }
    modify(fleet, WORKSTATIONS, id, req.version, |mut ws: Workstation| {
        if let Some(t) = req.station_type.as_ref().filter(|t| **t != ws.station_type) {
            non_empty("station_type", t)?;
            if ws.occupancy > 0 {
                return Err(FleetError::Conflict(format!("workstation {id} is in use; cannot change its type")));
            }
            ws.station_type = t.clone();
        }
        if let Some(capacity) = req.capacity {
            if capacity < ws.occupancy {
                return Err(FleetError::Conflict(format!(
                    "capacity {capacity} is below current occupancy {}",
                    ws.occupancy
                )));
            }
            ws.capacity = capacity;
        }
        if let Some(name) = &req.name {
            ws.name = name.clone();
        }
        ws.pose = req.pose.unwrap_or(ws.pose);
        match req.state {
            Some(state) => ws.set_down(state == StationState::Down),
            None => ws.refresh_state(),
        }
        ws.check()?;
        let event = station_event(&ws, "updated", now, json!({}));
        Ok((ws, vec![event]))
    })
}

/// Refuses while the station is reserved, processing, or holds waiting parts.
pub fn delete_workstation(fleet: &Fleet, id: &str, version: Option<u64>, now: Timestamp) -> Result<(), FleetError> {
    let current: Versioned<Workstation> = fleet.load(WORKSTATIONS, id)?;
    let waiting = fleet.list::<RoutingInstance>(INSTANCES, &Filter::eq("location", id))?;
    if current.value.occupancy > 0 || waiting.iter().any(|i| !i.value.phase.is_terminal()) {
        return Err(FleetError::Conflict(format!("workstation {id} is in use")));
    }
    let event = station_event(&current.value, "removed", now, json!({}));
    fleet.store().delete_logged(WORKSTATIONS, id, Some(version.unwrap_or(current.version)), vec![event])?;
    Ok(())
}

fn check_routing(fleet: &Fleet, routing: &Routing) -> Result<(), FleetError> {
    non_empty("part_number", &routing.part_number)?;
    let (types, groups) = known_sets(fleet)?;
    validate_routing(routing, &types, &groups)
        .map_err(|violations| FleetError::InvalidRouting { id: routing.id.clone(), violations })
}

pub fn create_routing(fleet: &Fleet, req: &NewRouting) -> Result<Versioned<Routing>, FleetError> {
    if let Some(id) = &req.id {
        check_id(id)?;
    }
    let mut routing = Routing {
        id: req.id.clone().unwrap_or_default(),
        part_number: req.part_number.clone(),
        customer: req.customer.clone(),
        steps: req.steps.clone(),
        active: false,
    };
    check_routing(fleet, &routing)?;
    if req.id.is_none() {
        routing.id = fleet.next_id(ROUTINGS);
    }
    let id = routing.id.clone();
    let version = fleet.insert(ROUTINGS, &id, &routing, vec![])?;
    Ok(Versioned { version, value: routing })
}

/// Step edits apply to instances not yet activated; running instances read
/// the routing afresh at every step.
pub fn update_routing(fleet: &Fleet, id: &str, req: &RoutingUpdate) -> Result<Versioned<Routing>, FleetError> {
    modify(fleet, ROUTINGS, id, req.version, |mut r: Routing| {
        if let Some(steps) = &req.steps {
            r.steps = steps.clone();
        }
        if let Some(part) = &req.part_number {
            r.part_number = part.clone();
        }
        if let Some(customer) = &req.customer {
            r.customer = customer.clone();
        }
        r.active = req.active.unwrap_or(r.active);
        check_routing(fleet, &r)?;
        Ok((r, vec![]))
    })
}

/// Refuses while any instance of the routing is still running.
pub fn delete_routing(fleet: &Fleet, id: &str, version: Option<u64>) -> Result<(), FleetError> {
    let current: Versioned<Routing> = fleet.load(ROUTINGS, id)?;
    let running = fleet
        .list::<RoutingInstance>(INSTANCES, &Filter::eq("routing_id", id))?
        .into_iter()
        .filter(|i| !i.value.phase.is_terminal())
        .count();
    if running > 0 {
        return Err(FleetError::Conflict(format!("routing {id} has {running} running instances")));
    }
    fleet.store().delete(ROUTINGS, id, Some(version.unwrap_or(current.version)))?;
    Ok(())
}
