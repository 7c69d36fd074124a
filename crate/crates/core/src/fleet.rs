//! Typed view of the document store: the shared world every scheduler and
//! workflow operation reads and writes.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::clock::{Clock, ManualClock, SystemClock};
use crate::domain::{DomainError, NewAuditEvent, RoutingViolation, Timestamp};
use crate::scheduler::SchedulerConfig;
use crate::store::{Filter, Store, StoreError};

pub const WORKERS: &str = "workers";
pub const WORKSTATIONS: &str = "workstations";
pub const ROUTINGS: &str = "routings";
pub const INSTANCES: &str = "instances";
pub const JOBS: &str = "jobs";
pub const COLLECTIONS: &[&str] = &[WORKERS, WORKSTATIONS, ROUTINGS, INSTANCES, JOBS];

#[derive(Debug, Error)]
pub enum FleetError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("routing {id} failed validation")]
    InvalidRouting { id: String, violations: Vec<RoutingViolation> },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("stored {collection}/{id} does not decode: {source}")]
    Decode { collection: String, id: String, source: serde_json::Error },
}

impl FleetError {
    pub fn is_conflict(&self) -> bool {
        match self {
            FleetError::Store(e) => e.is_conflict(),
            FleetError::Conflict(_) => true,
            _ => false,
        }
    }
}

/// A decoded document together with the version it was read at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub version: u64,
    #[serde(flatten)]
    pub value: T,
}

#[derive(Clone)]
pub enum FleetClock {
    System,
    Manual(Arc<ManualClock>),
}

impl FleetClock {
    pub fn now(&self) -> Timestamp {
        match self {
            FleetClock::System => SystemClock.now(),
            FleetClock::Manual(c) => c.now(),
        }
    }
}

/// Outcome of one read-modify-write attempt inside [`Fleet::update`].
pub enum Change<T, R> {
    /// Write `T` (with these events) and return `R`.
    Write(T, Vec<NewAuditEvent>, R),
    /// Leave the document untouched and return `R`.
    Keep(R),
}

pub struct Fleet {
    store: Store,
    clock: FleetClock,
    config: SchedulerConfig,
    counters: Mutex<HashMap<&'static str, u64>>,
}

fn id_prefix(collection: &str) -> &'static str {
    match collection {
        WORKERS => "wrk",
        WORKSTATIONS => "ws",
        ROUTINGS => "rt",
        INSTANCES => "ins",
        JOBS => "job",
        _ => "doc",
    }
}

impl Fleet {
    /// Wraps an existing store. Id counters resume past every id already
    /// present in documents or the audit log.
    pub fn new(store: Store, clock: FleetClock, config: SchedulerConfig) -> Self {
        let fleet = Self { store, clock, config, counters: Mutex::new(HashMap::new()) };
        fleet.seed_counters();
        fleet
    }

    pub fn in_memory(clock: FleetClock, config: SchedulerConfig) -> Self {
        Self::new(Store::in_memory(COLLECTIONS), clock, config)
    }

    /// Opens a durable fleet under `dir` and repairs any half-finished
    /// multi-document operation left by a crash.
    pub fn open(dir: impl AsRef<Path>, clock: FleetClock, config: SchedulerConfig) -> Result<Self, FleetError> {
        let fleet = Self::new(Store::open(dir, COLLECTIONS)?, clock, config);
        if let FleetClock::Manual(clock) = &fleet.clock {
            if let Some(last) = fleet.store.read_audit(fleet.store.audit_len().saturating_sub(1)).first() {
                clock.set(last.timestamp);
            }
        }
        crate::workflow::reconcile(&fleet)?;
        Ok(fleet)
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn clock(&self) -> &FleetClock {
        &self.clock
    }

    pub fn manual_clock(&self) -> Option<&Arc<ManualClock>> {
        match &self.clock {
            FleetClock::Manual(c) => Some(c),
            FleetClock::System => None,
        }
    }

    /// Fresh id for `collection`, e.g. `wrk-000001`. Zero-padded so that
    /// lexicographic order follows creation order.
    pub fn next_id(&self, collection: &str) -> String {
        let prefix = id_prefix(collection);
        let mut counters = self.counters.lock();
        let n = counters.entry(prefix).or_insert(0);
        *n += 1;
        format!("{prefix}-{:06}", *n)
    }

    fn seed_counters(&self) {
        let mut seen: HashMap<&'static str, u64> = HashMap::new();
        let mut note = |s: &str| {
            for prefix in COLLECTIONS.iter().map(|c| id_prefix(c)) {
                if let Some(n) = s.strip_prefix(prefix).and_then(|r| r.strip_prefix('-')).and_then(|d| d.parse().ok()) {
                    let max = seen.entry(prefix).or_insert(0);
                    *max = (*max).max(n);
                }
            }
        };
        for coll in COLLECTIONS {
            for doc in self.store.query(coll, &Filter::All).unwrap_or_default() {
                note(&doc.id);
            }
        }
        for event in self.store.read_audit(0) {
            note(&event.subject_id);
            walk_strings(&event.payload, &mut note);
        }
        *self.counters.lock() = seen;
    }

    pub fn load<T: DeserializeOwned>(&self, collection: &str, id: &str) -> Result<Versioned<T>, FleetError> {
        let doc = self.store.get(collection, id).map_err(|e| match e {
            StoreError::NotFound { .. } => FleetError::NotFound { kind: kind_name(collection), id: id.to_string() },
            other => other.into(),
        })?;
        decode(collection, &doc.id, doc.version, doc.body)
    }

    pub fn try_load<T: DeserializeOwned>(&self, collection: &str, id: &str) -> Result<Option<Versioned<T>>, FleetError> {
        match self.load(collection, id) {
            Ok(v) => Ok(Some(v)),
            Err(FleetError::NotFound { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn list<T: DeserializeOwned>(&self, collection: &str, filter: &Filter) -> Result<Vec<Versioned<T>>, FleetError> {
        self.store
            .query(collection, filter)?
            .into_iter()
            .map(|doc| decode(collection, &doc.id, doc.version, doc.body))
            .collect()
    }

    pub fn insert<T: Serialize>(
        &self,
        collection: &str,
        id: &str,
        value: &T,
        events: Vec<NewAuditEvent>,
    ) -> Result<u64, FleetError> {
        Ok(self.store.put_logged(collection, id, serde_json::to_value(value)?, None, events)?)
    }

    pub fn replace<T: Serialize>(
        &self,
        collection: &str,
        id: &str,
        value: &T,
        expected: u64,
        events: Vec<NewAuditEvent>,
    ) -> Result<u64, FleetError> {
        Ok(self.store.put_logged(collection, id, serde_json::to_value(value)?, Some(expected), events)?)
    }

    /// Optimistic read-modify-write: reloads and retries on version conflict
    /// until `f` either commits or declines.
    pub fn update<T, R, F>(&self, collection: &str, id: &str, mut f: F) -> Result<R, FleetError>
    where
        T: Serialize + DeserializeOwned,
        F: FnMut(T) -> Result<Change<T, R>, FleetError>,
    {
        loop {
            let current: Versioned<T> = self.load(collection, id)?;
            match f(current.value)? {
                Change::Keep(r) => return Ok(r),
                Change::Write(next, events, r) => {
                    match self.replace(collection, id, &next, current.version, events) {
                        Ok(_) => return Ok(r),
                        Err(FleetError::Store(StoreError::VersionConflict { .. })) => continue,
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }
}

impl From<serde_json::Error> for FleetError {
    fn from(e: serde_json::Error) -> Self {
        FleetError::Store(StoreError::Json(e))
    }
}

fn decode<T: DeserializeOwned>(collection: &str, id: &str, version: u64, body: Value) -> Result<Versioned<T>, FleetError> {
    serde_json::from_value(body)
        .map(|value| Versioned { version, value })
        .map_err(|source| FleetError::Decode { collection: collection.into(), id: id.into(), source })
}

fn kind_name(collection: &str) -> &'static str {
    match collection {
        WORKERS => "worker",
        WORKSTATIONS => "workstation",
        ROUTINGS => "routing",
        INSTANCES => "instance",
        JOBS => "job",
        _ => "document",
    }
}

fn walk_strings(value: &Value, f: &mut impl FnMut(&str)) {
    match value {
        Value::String(s) => f(s),
        Value::Array(items) => items.iter().for_each(|v| walk_strings(v, f)),
        Value::Object(map) => map.values().for_each(|v| walk_strings(v, f)),
        _ => {}
    }
}
