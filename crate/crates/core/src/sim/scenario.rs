use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admin::{self, NewRouting, NewWorker, NewWorkstation};
use crate::domain::{check_battery, validate_routing, Pose3, Routing, RoutingStep, Worker, Workstation};
use crate::fleet::{Fleet, FleetError, ROUTINGS, WORKERS, WORKSTATIONS};
use crate::store::Filter;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("scenario {path}:{line}:{column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSpec {
    pub id: String,
    #[serde(default)]
    pub name: Option<String>,
    pub station_type: String,
    pub pose: Pose3,
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSpec {
    pub name: String,
    pub worker_group: String,
    pub start_pose: Pose3,
    /// Metres per second.
    pub speed: f64,
    #[serde(default = "full")]
    pub battery_start: f64,
    /// Battery fraction used per metre driven.
    #[serde(default)]
    pub battery_drain_per_meter: f64,
}

fn full() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingSpec {
    pub id: String,
    pub part_number: String,
    #[serde(default)]
    pub customer: String,
    pub steps: Vec<RoutingStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub routing_id: String,
    pub quantity: i64,
    /// Seconds after the start of the run.
    #[serde(default)]
    pub at_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub stations: Vec<StationSpec>,
    pub workers: Vec<WorkerSpec>,
    pub routings: Vec<RoutingSpec>,
    #[serde(default)]
    pub activations: Vec<Activation>,
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Read { path: path.into(), source })?;
    parse_scenario(&text, path)
}

/// Parses and validates; `origin` only labels errors.
pub fn parse_scenario(text: &str, origin: &Path) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        path: origin.into(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    /// Every problem at once, so a broken file can be fixed in one pass.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut problems = Vec::new();
        let mut ids = BTreeSet::new();
        for s in &self.stations {
            if !ids.insert(s.id.as_str()) {
                problems.push(format!("duplicate station id {:?}", s.id));
            }
            if s.capacity == 0 {
                problems.push(format!("station {:?}: capacity must be positive", s.id));
            }
        }
        let mut names = BTreeSet::new();
        for w in &self.workers {
            if !names.insert(w.name.as_str()) {
                problems.push(format!("duplicate worker name {:?}", w.name));
            }
            if !(w.speed.is_finite() && w.speed > 0.0) {
                problems.push(format!("worker {:?}: speed must be positive", w.name));
            }
            if check_battery(w.battery_start).is_err() {
                problems.push(format!("worker {:?}: battery_start outside [0, 1]", w.name));
            }
            if !(w.battery_drain_per_meter.is_finite() && w.battery_drain_per_meter >= 0.0) {
                problems.push(format!("worker {:?}: battery_drain_per_meter must be non-negative", w.name));
            }
        }
        let types: BTreeSet<String> = self.stations.iter().map(|s| s.station_type.clone()).collect();
        let groups: BTreeSet<String> = self.workers.iter().map(|w| w.worker_group.clone()).collect();
        let mut routing_ids = BTreeSet::new();
        for r in &self.routings {
            if !routing_ids.insert(r.id.as_str()) {
                problems.push(format!("duplicate routing id {:?}", r.id));
            }
            if let Err(violations) = validate_routing(&r.to_routing(), &types, &groups) {
                problems.extend(violations.iter().map(|v| format!("routing {:?}: {v}", r.id)));
            }
        }
        for (n, a) in self.activations.iter().enumerate() {
            if !routing_ids.contains(a.routing_id.as_str()) {
                problems.push(format!("activation {n}: unknown routing {:?}", a.routing_id));
            }
            if a.quantity < 1 {
                problems.push(format!("activation {n}: quantity must be at least 1"));
            }
            if !(a.at_time.is_finite() && a.at_time >= 0.0) {
                problems.push(format!("activation {n}: at_time must be non-negative"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(problems))
        }
    }

    pub fn total_quantity(&self) -> i64 {
        self.activations.iter().map(|a| a.quantity).sum()
    }
}

impl StationSpec {
    pub fn to_request(&self) -> NewWorkstation {
        NewWorkstation {
            id: Some(self.id.clone()),
            name: self.name.clone(),
            station_type: self.station_type.clone(),
            pose: self.pose,
            capacity: self.capacity,
            down: false,
        }
    }
}

impl WorkerSpec {
    pub fn to_request(&self) -> NewWorker {
        NewWorker {
            name: self.name.clone(),
            worker_group: self.worker_group.clone(),
            pose: Some(self.start_pose),
            battery: Some(self.battery_start),
            address: None,
            port: None,
        }
    }
}

impl RoutingSpec {
    pub fn to_routing(&self) -> Routing {
        Routing {
            id: self.id.clone(),
            part_number: self.part_number.clone(),
            customer: self.customer.clone(),
            steps: self.steps.clone(),
            active: false,
        }
    }

    pub fn to_request(&self) -> NewRouting {
        NewRouting {
            id: Some(self.id.clone()),
            part_number: self.part_number.clone(),
            customer: self.customer.clone(),
            steps: self.steps.clone(),
        }
    }
}

/// Registers the scenario's stations, workers and routings directly in a
/// fleet, skipping anything already there (workers are matched by name).
/// Activations are left to whoever drives the run.
pub fn preload(fleet: &Fleet, scenario: &Scenario) -> Result<(), FleetError> {
    let now = fleet.now();
    for s in &scenario.stations {
        if fleet.try_load::<Workstation>(WORKSTATIONS, &s.id)?.is_none() {
            admin::create_workstation(fleet, &s.to_request(), now)?;
        }
    }
    let existing: BTreeSet<String> =
        fleet.list::<Worker>(WORKERS, &Filter::All)?.into_iter().map(|w| w.value.name).collect();
    for w in scenario.workers.iter().filter(|w| !existing.contains(&w.name)) {
        admin::create_worker(fleet, &w.to_request(), now)?;
    }
    for r in &scenario.routings {
        if fleet.try_load::<Routing>(ROUTINGS, &r.id)?.is_none() {
            admin::create_routing(fleet, &r.to_request())?;
        }
    }
    Ok(())
}
