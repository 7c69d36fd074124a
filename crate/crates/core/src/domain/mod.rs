//! Fleet domain model: workers, workstations, routings and their activated
//! instances, transport jobs, the poll payload and audit events.
//!
//! Everything here is plain data plus pure functions. Wire encoding is JSON
//! with snake_case enum tags and RFC 3339 UTC timestamps.

mod audit;
mod pose;
mod routing;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{AuditEvent, AuditKind, NewAuditEvent};
pub use pose::{normalize_yaw, pose_distance, Pose3};
pub use routing::{advance_step, validate_routing, RoutingViolation};

pub type Timestamp = DateTime<Utc>;

/// Station type tag of the buffer raw parts are activated at.
pub const INFEED: &str = "infeed";
/// Station type tag finished parts are delivered to.
pub const OUTFEED: &str = "outfeed";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("pose coordinates must be finite")]
    NonFinitePose,
    #[error("battery {0} outside [0, 1]")]
    BatteryOutOfRange(f64),
    #[error("capacity must be positive")]
    ZeroCapacity,
    #[error("state conflict: {0}")]
    StateConflict(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerStatus {
    Idle,
    Assigned,
    Working,
    Charging,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Worker {
    pub id: String,
    pub name: String,
    pub worker_group: String,
    pub status: WorkerStatus,
    pub pose: Pose3,
    pub battery: f64,
    pub last_seen: Timestamp,
    #[serde(default)]
    pub address: Option<String>,
    #[serde(default)]
    pub port: Option<u16>,
    /// The in-flight job, if any. Set at claim time, cleared on completion
    /// or reclaim. At most one per worker.
    #[serde(default)]
    pub current_job: Option<String>,
}

impl Worker {
    pub fn new(id: impl Into<String>, name: impl Into<String>, worker_group: impl Into<String>, now: Timestamp) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            worker_group: worker_group.into(),
            status: WorkerStatus::Idle,
            pose: Pose3::ORIGIN,
            battery: 1.0,
            last_seen: now,
            address: None,
            port: None,
            current_job: None,
        }
    }

    pub fn check(&self) -> Result<(), DomainError> {
        check_battery(self.battery)
    }
}

pub fn check_battery(battery: f64) -> Result<(), DomainError> {
    if (0.0..=1.0).contains(&battery) {
        Ok(())
    } else {
        Err(DomainError::BatteryOutOfRange(battery))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationState {
    Free,
    Occupied,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workstation {
    pub id: String,
    pub name: String,
    pub station_type: String,
    pub pose: Pose3,
    pub capacity: u32,
    pub state: StationState,
    pub occupancy: u32,
}

impl Workstation {
    pub fn new(id: impl Into<String>, station_type: impl Into<String>, pose: Pose3, capacity: u32) -> Self {
        let id = id.into();
        Self {
            name: id.clone(),
            id,
            station_type: station_type.into(),
            pose,
            capacity,
            state: StationState::Free,
            occupancy: 0,
        }
    }

    pub fn is_down(&self) -> bool {
        self.state == StationState::Down
    }

    /// Up and with at least one unreserved slot.
    pub fn accepts_work(&self) -> bool {
        !self.is_down() && self.occupancy < self.capacity
    }

    pub fn check(&self) -> Result<(), DomainError> {
        if self.capacity == 0 {
            return Err(DomainError::ZeroCapacity);
        }
        if self.occupancy > self.capacity {
            return Err(DomainError::StateConflict(format!(
                "occupancy {} exceeds capacity {}",
                self.occupancy, self.capacity
            )));
        }
        Ok(())
    }

    pub fn reserve(&mut self) -> Result<(), DomainError> {
        if !self.accepts_work() {
            return Err(DomainError::StateConflict(format!("workstation {} has no free slot", self.id)));
        }
        self.occupancy += 1;
        self.refresh_state();
        Ok(())
    }

    pub fn release(&mut self) {
        self.occupancy = self.occupancy.saturating_sub(1);
        self.refresh_state();
    }

    pub fn set_down(&mut self, down: bool) {
        self.state = if down { StationState::Down } else { StationState::Free };
        self.refresh_state();
    }

    /// Recomputes `free`/`occupied` from occupancy. `down` is sticky.
    pub fn refresh_state(&mut self) {
        if self.state != StationState::Down {
            self.state = if self.occupancy >= self.capacity {
                StationState::Occupied
            } else {
                StationState::Free
            };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingStep {
    pub index: usize,
    pub operation_name: String,
    pub station_type: String,
    pub worker_group: String,
    /// Seconds of processing at the destination station.
    pub process_duration: f64,
    /// Higher is more urgent.
    #[serde(default)]
    pub priority: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Routing {
    pub id: String,
    pub part_number: String,
    #[serde(default)]
    pub customer: String,
    pub steps: Vec<RoutingStep>,
    #[serde(default)]
    pub active: bool,
}

impl Routing {
    pub fn last_index(&self) -> Option<usize> {
        self.steps.len().checked_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstancePhase {
    AwaitingTransport,
    InTransit,
    Processing,
    Completed,
    Cancelled,
}

impl InstancePhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, InstancePhase::Completed | InstancePhase::Cancelled)
    }
}

/// One activated execution of a routing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingInstance {
    pub id: String,
    pub routing_id: String,
    pub current_step: usize,
    pub phase: InstancePhase,
    /// Workstation id, or the carrying worker's id while in transit.
    pub location: String,
    pub created_at: Timestamp,
    #[serde(default)]
    pub completed_at: Option<Timestamp>,
    /// When processing of `current_step` finishes; set while `processing`.
    #[serde(default)]
    pub process_ends_at: Option<Timestamp>,
}

impl RoutingInstance {
    pub fn activated(id: impl Into<String>, routing_id: impl Into<String>, location: impl Into<String>, now: Timestamp) -> Self {
        Self {
            id: id.into(),
            routing_id: routing_id.into(),
            current_step: 0,
            phase: InstancePhase::AwaitingTransport,
            location: location.into(),
            created_at: now,
            completed_at: None,
            process_ends_at: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobPhase {
    Assigned,
    EnRouteToSource,
    Carrying,
    Delivered,
}

impl JobPhase {
    /// Position in the only legal progression order.
    pub fn rank(self) -> u8 {
        match self {
            JobPhase::Assigned => 0,
            JobPhase::EnRouteToSource => 1,
            JobPhase::Carrying => 2,
            JobPhase::Delivered => 3,
        }
    }
}

/// A single transport assignment bound to one worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub worker_id: String,
    pub instance_id: String,
    pub step_index: usize,
    pub source: Pose3,
    pub destination: Pose3,
    pub source_station: String,
    pub destination_station: String,
    pub assigned_at: Timestamp,
    pub phase: JobPhase,
    pub operation_name: String,
    pub part_number: String,
}

impl Job {
    pub fn payload(&self) -> JobPayload {
        JobPayload::assigned(JobDetails {
            job_id: self.id.clone(),
            source: self.source,
            destination: self.destination,
            operation_name: self.operation_name.clone(),
            instance_id: self.instance_id.clone(),
            part_number: self.part_number.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobDetails {
    pub job_id: String,
    pub source: Pose3,
    pub destination: Pose3,
    pub operation_name: String,
    pub instance_id: String,
    pub part_number: String,
}

/// Response to a worker poll. `status` is 1 with job details, or 0 alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPayload")]
pub struct JobPayload {
    pub status: u8,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub job: Option<JobDetails>,
}

#[derive(Deserialize)]
struct RawPayload {
    status: u8,
    #[serde(flatten)]
    rest: serde_json::Map<String, serde_json::Value>,
}

impl TryFrom<RawPayload> for JobPayload {
    type Error = String;

    fn try_from(raw: RawPayload) -> Result<Self, Self::Error> {
        match raw.status {
            0 => Ok(JobPayload::none()),
            1 => serde_json::from_value(serde_json::Value::Object(raw.rest))
                .map(JobPayload::assigned)
                .map_err(|e| format!("status=1 payload: {e}")),
            other => Err(format!("status must be 0 or 1, got {other}")),
        }
    }
}

impl JobPayload {
    pub fn none() -> Self {
        Self { status: 0, job: None }
    }

    pub fn assigned(details: JobDetails) -> Self {
        Self { status: 1, job: Some(details) }
    }

    pub fn is_assigned(&self) -> bool {
        self.status == 1
    }
}
