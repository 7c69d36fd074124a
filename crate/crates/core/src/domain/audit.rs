use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    TaskAssigned,
    WorkerActivity,
    WorkstationState,
    RoutingActivated,
    RoutingCompleted,
}

/// Append-only record of one decision or state change. `seq` is assigned by
/// the log and is gap-free from 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub timestamp: Timestamp,
    pub kind: AuditKind,
    pub subject_id: String,
    pub payload: Value,
}

/// An event before the log has numbered it.
#[derive(Debug, Clone, PartialEq)]
pub struct NewAuditEvent {
    pub timestamp: Timestamp,
    pub kind: AuditKind,
    pub subject_id: String,
    pub payload: Value,
}

impl NewAuditEvent {
    pub fn new(kind: AuditKind, subject_id: impl Into<String>, timestamp: Timestamp, payload: Value) -> Self {
        Self { timestamp, kind, subject_id: subject_id.into(), payload }
    }

    pub fn with_seq(self, seq: u64) -> AuditEvent {
        AuditEvent {
            seq,
            timestamp: self.timestamp,
            kind: self.kind,
            subject_id: self.subject_id,
            payload: self.payload,
        }
    }
}
