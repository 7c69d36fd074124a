use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clock::seconds_between;
use crate::domain::{AuditEvent, AuditKind, InstancePhase, Timestamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub worker_id: String,
    pub distance_traveled: f64,
    pub jobs_completed: u64,
    pub idle_time: f64,
    pub final_battery: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationReport {
    pub station_type: String,
    pub capacity: u32,
    /// Summed processing time across all slots, in seconds.
    pub busy_time: f64,
    /// `busy_time / (capacity * makespan)`.
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StuckInstance {
    pub id: String,
    pub routing_id: String,
    pub current_step: usize,
    pub phase: InstancePhase,
    pub location: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    /// Every activated instance reached a terminal phase.
    pub complete: bool,
    /// Seconds from the first activation to the last completion.
    pub makespan: f64,
    /// Simulated seconds when the run stopped.
    pub sim_time: f64,
    pub total_instances: usize,
    pub completed_instances: usize,
    pub stuck_instances: Vec<StuckInstance>,
    pub event_count: u64,
    /// Keyed by worker name.
    pub workers: BTreeMap<String, WorkerReport>,
    /// Keyed by station id.
    pub stations: BTreeMap<String, StationReport>,
}

/// Seconds from the first `routing_activated` to the last completed
/// `routing_completed`; zero if nothing completed.
pub fn makespan(events: &[AuditEvent]) -> f64 {
    let first = events.iter().find(|e| e.kind == AuditKind::RoutingActivated).map(|e| e.timestamp);
    let last = events
        .iter()
        .filter(|e| e.kind == AuditKind::RoutingCompleted && e.payload["outcome"] == "completed")
        .map(|e| e.timestamp)
        .max();
    match (first, last) {
        (Some(a), Some(b)) => seconds_between(a, b).max(0.0),
        _ => 0.0,
    }
}

/// Processing time per station. An interval still open at the end of the
/// log runs to `end`.
pub fn station_busy_time(events: &[AuditEvent], end: Timestamp) -> BTreeMap<String, f64> {
    let mut open: HashMap<(String, u64), (String, Timestamp)> = HashMap::new();
    let mut busy: BTreeMap<String, f64> = BTreeMap::new();
    for ev in events.iter().filter(|e| e.kind == AuditKind::WorkstationState) {
        let key = || {
            let inst = ev.payload.get("instance_id").and_then(Value::as_str)?;
            let step = ev.payload.get("step_index").and_then(Value::as_u64)?;
            Some((inst.to_string(), step))
        };
        match ev.payload.get("action").and_then(Value::as_str) {
            Some("processing_started") => {
                if let Some(k) = key() {
                    open.insert(k, (ev.subject_id.clone(), ev.timestamp));
                }
            }
            Some("processing_finished") => {
                if let Some((station, start)) = key().and_then(|k| open.remove(&k)) {
                    *busy.entry(station).or_default() += seconds_between(start, ev.timestamp);
                }
            }
            _ => {}
        }
    }
    for (station, start) in open.into_values() {
        *busy.entry(station).or_default() += seconds_between(start, end).max(0.0);
    }
    busy
}

impl RunReport {
    /// Fixed-width summary for terminals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let status = if self.complete { "complete" } else { "INCOMPLETE" };
        let _ = writeln!(out, "scenario {} (seed {}): {status}", self.scenario, self.seed);
        let _ = writeln!(
            out,
            "makespan {:.1} s, {} of {} instances completed, {} audit events",
            self.makespan, self.completed_instances, self.total_instances, self.event_count
        );
        let _ = writeln!(out, "\n{:<16} {:>12} {:>6} {:>10} {:>8}", "worker", "distance m", "jobs", "idle s", "battery");
        for (name, w) in &self.workers {
            let _ = writeln!(
                out,
                "{:<16} {:>12.1} {:>6} {:>10.1} {:>8.3}",
                name, w.distance_traveled, w.jobs_completed, w.idle_time, w.final_battery
            );
        }
        let _ = writeln!(out, "\n{:<10} {:<10} {:>4} {:>10} {:>12}", "station", "type", "cap", "busy s", "utilization");
        for (id, s) in &self.stations {
            let _ = writeln!(
                out,
                "{:<10} {:<10} {:>4} {:>10.1} {:>11.1}%",
                id,
                s.station_type,
                s.capacity,
                s.busy_time,
                s.utilization * 100.0
            );
        }
        if !self.stuck_instances.is_empty() {
            let _ = writeln!(out, "\nstuck instances:");
            for s in &self.stuck_instances {
                let _ = writeln!(out, "  {} ({}) step {} {:?} at {}", s.id, s.routing_id, s.current_step, s.phase, s.location);
            }
        }
        out
    }
}
