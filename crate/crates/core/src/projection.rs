//! Folds over the audit log.
//!
//! The log alone is enough to rebuild every instance's phase, every
//! station's occupancy history and each part's path through the shop; these
//! folds back the invariant checks in tests and the simulator report.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use serde_json::Value;

use crate::domain::{AuditEvent, AuditKind, InstancePhase};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProjectedInstance {
    pub routing_id: String,
    pub current_step: usize,
    pub phase: InstancePhase,
}

fn action(ev: &AuditEvent) -> &str {
    ev.payload.get("action").and_then(Value::as_str).unwrap_or("")
}

fn instance_of(ev: &AuditEvent) -> Option<&str> {
    ev.payload.get("instance_id").and_then(Value::as_str)
}

fn step_of(ev: &AuditEvent) -> Option<usize> {
    ev.payload.get("step_index").and_then(Value::as_u64).map(|s| s as usize)
}

/// Rebuilds each instance's step and phase from the log.
pub fn project_instances(events: &[AuditEvent]) -> BTreeMap<String, ProjectedInstance> {
    let mut out: BTreeMap<String, ProjectedInstance> = BTreeMap::new();
    for ev in events {
        match ev.kind {
            AuditKind::RoutingActivated => {
                let ids = ev.payload["instance_ids"].as_array().cloned().unwrap_or_default();
                for id in ids.iter().filter_map(Value::as_str) {
                    out.insert(
                        id.to_string(),
                        ProjectedInstance {
                            routing_id: ev.subject_id.clone(),
                            current_step: 0,
                            phase: InstancePhase::AwaitingTransport,
                        },
                    );
                }
            }
            AuditKind::TaskAssigned => set_phase(&mut out, ev, InstancePhase::InTransit),
            AuditKind::WorkerActivity if action(ev) == "job_reclaimed" => {
                set_phase(&mut out, ev, InstancePhase::AwaitingTransport)
            }
            AuditKind::WorkstationState => match action(ev) {
                "processing_started" => set_phase(&mut out, ev, InstancePhase::Processing),
                "processing_finished" => {
                    if let Some(inst) = instance_of(ev).and_then(|id| out.get_mut(id)) {
                        if let Some(next) = ev.payload.get("next_step").and_then(Value::as_u64) {
                            inst.current_step = next as usize;
                        }
                        if let Ok(phase) = serde_json::from_value(ev.payload["phase"].clone()) {
                            inst.phase = phase;
                        }
                    }
                }
                _ => {}
            },
            AuditKind::RoutingCompleted => {
                if let Some(inst) = instance_of(ev).and_then(|id| out.get_mut(id)) {
                    inst.phase = match ev.payload.get("outcome").and_then(Value::as_str) {
                        Some("cancelled") => InstancePhase::Cancelled,
                        _ => InstancePhase::Completed,
                    };
                }
            }
            _ => {}
        }
    }
    out
}

fn set_phase(out: &mut BTreeMap<String, ProjectedInstance>, ev: &AuditEvent, phase: InstancePhase) {
    if let Some(inst) = instance_of(ev).and_then(|id| out.get_mut(id)) {
        inst.phase = phase;
        if let Some(step) = step_of(ev) {
            inst.current_step = step;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityViolation {
    pub seq: u64,
    pub station: String,
    pub occupancy: i64,
    pub capacity: i64,
}

/// Replays station occupancy event by event and reports every prefix at
/// which it exceeds capacity. Two independent readings are checked: the
/// occupancy recorded in each event, and a running count of reservations
/// minus releases.
pub fn capacity_violations(events: &[AuditEvent]) -> Vec<CapacityViolation> {
    let mut counted: HashMap<&str, i64> = HashMap::new();
    let mut out = Vec::new();
    for ev in events.iter().filter(|e| e.kind == AuditKind::WorkstationState) {
        let capacity = ev.payload.get("capacity").and_then(Value::as_i64);
        let recorded = ev.payload.get("occupancy").and_then(Value::as_i64);
        let count = counted.entry(ev.subject_id.as_str()).or_insert(0);
        match action(ev) {
            "reserved" => *count += 1,
            "released" => *count -= 1,
            "recovered" | "updated" | "created" => *count = recorded.unwrap_or(*count),
            _ => {}
        }
        let Some(capacity) = capacity else { continue };
        for occupancy in [Some(*count), recorded].into_iter().flatten() {
            if occupancy > capacity || occupancy < 0 {
                out.push(CapacityViolation { seq: ev.seq, station: ev.subject_id.clone(), occupancy, capacity });
                break;
            }
        }
    }
    out
}

/// `(instance_id, step_index)` pairs handed to a second worker while an
/// earlier claim on the same step was still open.
pub fn duplicate_assignments(events: &[AuditEvent]) -> Vec<(String, usize)> {
    let mut open: HashMap<(String, usize), bool> = HashMap::new();
    let mut dups = Vec::new();
    for ev in events {
        let (Some(inst), Some(step)) = (instance_of(ev), step_of(ev)) else { continue };
        let key = (inst.to_string(), step);
        match (ev.kind, action(ev)) {
            (AuditKind::TaskAssigned, _) => {
                if open.insert(key.clone(), true) == Some(true) {
                    dups.push(key);
                }
            }
            (AuditKind::WorkerActivity, "job_reclaimed") | (AuditKind::WorkstationState, "processing_started") => {
                open.insert(key, false);
            }
            _ => {}
        }
    }
    dups
}

/// One instance-relevant event, reduced to what the trace check needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMark {
    Assigned(usize),
    Activity(usize),
    Reclaimed(usize),
    ProcessingStarted(usize),
    ProcessingFinished(usize),
    Completed,
    Cancelled,
}

/// Per-instance event traces, in log order.
pub fn instance_traces(events: &[AuditEvent]) -> BTreeMap<String, Vec<TraceMark>> {
    let mut out: BTreeMap<String, Vec<TraceMark>> = BTreeMap::new();
    for ev in events {
        if ev.kind == AuditKind::RoutingActivated {
            for id in ev.payload["instance_ids"].as_array().into_iter().flatten().filter_map(Value::as_str) {
                out.entry(id.to_string()).or_default();
            }
            continue;
        }
        let Some(inst) = instance_of(ev) else { continue };
        let step = step_of(ev).unwrap_or(0);
        let mark = match (ev.kind, action(ev)) {
            (AuditKind::TaskAssigned, _) => TraceMark::Assigned(step),
            (AuditKind::WorkerActivity, "job_reclaimed") => TraceMark::Reclaimed(step),
            (AuditKind::WorkerActivity, "progress" | "job_complete") => TraceMark::Activity(step),
            (AuditKind::WorkstationState, "processing_started") => TraceMark::ProcessingStarted(step),
            (AuditKind::WorkstationState, "processing_finished") => TraceMark::ProcessingFinished(step),
            (AuditKind::RoutingCompleted, _) => match ev.payload.get("outcome").and_then(Value::as_str) {
                Some("cancelled") => TraceMark::Cancelled,
                _ => TraceMark::Completed,
            },
            _ => continue,
        };
        out.entry(inst.to_string()).or_default().push(mark);
    }
    out
}

/// Checks a trace against the per-step pattern
/// `assigned activity* (reclaimed assigned activity*)* started activity* finished`,
/// steps in order, ending in `completed` when every step is done.
/// `steps` is the routing length.
pub fn check_trace(trace: &[TraceMark], steps: usize) -> Result<(), String> {
    #[derive(PartialEq)]
    enum At {
        Waiting,
        Claimed,
        Processing,
        Done,
    }
    let mut step = 0usize;
    let mut at = At::Waiting;
    for (i, mark) in trace.iter().enumerate() {
        let bad = || format!("unexpected {mark:?} at position {i} (step {step})");
        match (*mark, &at) {
            (TraceMark::Assigned(s), At::Waiting) if s == step => at = At::Claimed,
            (TraceMark::Activity(s), At::Claimed | At::Processing) if s == step => {}
            (TraceMark::Reclaimed(s), At::Claimed) if s == step => at = At::Waiting,
            (TraceMark::ProcessingStarted(s), At::Claimed) if s == step => at = At::Processing,
            (TraceMark::ProcessingFinished(s), At::Processing) if s == step => {
                step += 1;
                at = if step == steps { At::Done } else { At::Waiting };
            }
            (TraceMark::Completed, At::Done) => return finish(trace, i),
            (TraceMark::Cancelled, At::Waiting) => return finish(trace, i),
            _ => return Err(bad()),
        }
    }
    match at {
        At::Done => Err("all steps processed but no completion event".into()),
        _ => Ok(()),
    }
}

fn finish(trace: &[TraceMark], i: usize) -> Result<(), String> {
    if i + 1 == trace.len() {
        Ok(())
    } else {
        Err(format!("events after terminal mark at position {i}"))
    }
}

/// Stations an instance was processed at, in order: `(step, station_id)`.
pub fn processing_path(events: &[AuditEvent], instance_id: &str) -> Vec<(usize, String)> {
    events
        .iter()
        .filter(|e| {
            e.kind == AuditKind::WorkstationState
                && action(e) == "processing_started"
                && instance_of(e) == Some(instance_id)
        })
        .map(|e| (step_of(e).unwrap_or(0), e.subject_id.clone()))
        .collect()
}
