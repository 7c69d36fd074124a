use serde::{Deserialize, Serialize};

use crate::domain::{pose_distance, Pose3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LegPurpose {
    ToSource,
    ToDestination,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Leg {
    pub target: Pose3,
    pub purpose: LegPurpose,
}

/// Kinematic state of one simulated robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose3,
    /// Metres per second.
    pub speed: f64,
    pub battery: f64,
    pub drain_per_meter: f64,
    pub leg: Option<Leg>,
}

/// What the robot has to tell the server after a movement step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolAction {
    ArrivedAtSource,
    ArrivedAtDestination,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: RobotState,
    pub moved: f64,
    pub action: Option<ProtocolAction>,
}

/// Advances a robot by `dt` seconds along a straight line to its leg target.
/// Arrival snaps to the target pose, ends the leg and yields the matching
/// action; a robot with no leg stays put.
pub fn step_robot(state: &RobotState, dt: f64) -> StepOutcome {
    let mut next = state.clone();
    let Some(leg) = state.leg else {
        return StepOutcome { state: next, moved: 0.0, action: None };
    };
    let remaining = pose_distance(&state.pose, &leg.target);
    let reach = state.speed * dt.max(0.0);
    let (moved, action) = if reach >= remaining {
        next.pose = leg.target;
        next.leg = None;
        let action = match leg.purpose {
            LegPurpose::ToSource => ProtocolAction::ArrivedAtSource,
            LegPurpose::ToDestination => ProtocolAction::ArrivedAtDestination,
        };
        (remaining, Some(action))
    } else {
        let f = reach / remaining;
        let (dx, dy, dz) = (leg.target.x - state.pose.x, leg.target.y - state.pose.y, leg.target.z - state.pose.z);
        let heading = if dx == 0.0 && dy == 0.0 { state.pose.yaw } else { dy.atan2(dx) };
        next.pose = Pose3::new(state.pose.x + dx * f, state.pose.y + dy * f, state.pose.z + dz * f, heading)
            .unwrap_or(state.pose);
        (reach, None)
    };
    next.battery = (state.battery - moved * state.drain_per_meter).max(0.0);
    StepOutcome { state: next, moved, action }
}
