use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use super::{DomainError, InstancePhase, Routing, RoutingInstance, Timestamp, INFEED, OUTFEED};

/// One broken routing rule. Violations are reported as data, never as faults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum RoutingViolation {
    EmptySteps,
    NonContiguousIndex { position: usize, index: usize },
    UnknownStationType { step: usize, station_type: String },
    UnknownWorkerGroup { step: usize, worker_group: String },
    NegativeDuration { step: usize },
    FirstStepNotInfeed { station_type: String },
    LastStepNotOutfeed { station_type: String },
}

impl fmt::Display for RoutingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptySteps => write!(f, "empty steps"),
            Self::NonContiguousIndex { position, index } => {
                write!(f, "step at position {position} has index {index}")
            }
            Self::UnknownStationType { step, station_type } => {
                write!(f, "step {step}: unknown station type {station_type:?}")
            }
            Self::UnknownWorkerGroup { step, worker_group } => {
                write!(f, "step {step}: unknown worker group {worker_group:?}")
            }
            Self::NegativeDuration { step } => write!(f, "step {step}: negative or non-finite process duration"),
            Self::FirstStepNotInfeed { station_type } => {
                write!(f, "first step must use an {INFEED} station, not {station_type:?}")
            }
            Self::LastStepNotOutfeed { station_type } => {
                write!(f, "last step must use an {OUTFEED} station, not {station_type:?}")
            }
        }
    }
}

/// Checks a routing against the registered station types and worker groups.
/// Returns every violation found, not just the first.
pub fn validate_routing(
    routing: &Routing,
    known_station_types: &BTreeSet<String>,
    known_worker_groups: &BTreeSet<String>,
) -> Result<(), Vec<RoutingViolation>> {
    let mut violations = Vec::new();
    if routing.steps.is_empty() {
        violations.push(RoutingViolation::EmptySteps);
    }
    for (position, step) in routing.steps.iter().enumerate() {
        if step.index != position {
            violations.push(RoutingViolation::NonContiguousIndex { position, index: step.index });
        }
        if !known_station_types.contains(&step.station_type) {
            violations.push(RoutingViolation::UnknownStationType {
                step: position,
                station_type: step.station_type.clone(),
            });
        }
        if !known_worker_groups.contains(&step.worker_group) {
            violations.push(RoutingViolation::UnknownWorkerGroup {
                step: position,
                worker_group: step.worker_group.clone(),
            });
        }
        if !(step.process_duration.is_finite() && step.process_duration >= 0.0) {
            violations.push(RoutingViolation::NegativeDuration { step: position });
        }
    }
    if let Some(first) = routing.steps.first() {
        if first.station_type != INFEED {
            violations.push(RoutingViolation::FirstStepNotInfeed { station_type: first.station_type.clone() });
        }
    }
    if let Some(last) = routing.steps.last() {
        if last.station_type != OUTFEED {
            violations.push(RoutingViolation::LastStepNotOutfeed { station_type: last.station_type.clone() });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Moves an instance past a finished processing step: on to the next
/// transport, or to `completed` after the last step.
pub fn advance_step(
    instance: &RoutingInstance,
    routing: &Routing,
    now: Timestamp,
) -> Result<RoutingInstance, DomainError> {
    if instance.phase != InstancePhase::Processing {
        return Err(DomainError::StateConflict(format!(
            "instance {} is {:?}, not processing",
            instance.id, instance.phase
        )));
    }
    let last = routing
        .last_index()
        .ok_or_else(|| DomainError::StateConflict(format!("routing {} has no steps", routing.id)))?;
    if instance.current_step > last {
        return Err(DomainError::StateConflict(format!(
            "instance {} is at step {} beyond routing length {}",
            instance.id,
            instance.current_step,
            routing.steps.len()
        )));
    }
    let mut next = instance.clone();
    next.process_ends_at = None;
    if instance.current_step < last {
        next.current_step += 1;
        next.phase = InstancePhase::AwaitingTransport;
    } else {
        next.phase = InstancePhase::Completed;
        next.completed_at = Some(now);
    }
    Ok(next)
}
