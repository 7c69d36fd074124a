#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Barrier};

use agm::clock::{sim_time, ManualClock};
use agm::domain::{
    AuditKind, InstancePhase, Job, JobPayload, Pose3, Routing, RoutingInstance, RoutingStep, Worker, Workstation,
};
use agm::fleet::{Fleet, FleetClock, Versioned, INSTANCES, JOBS, ROUTINGS, WORKERS, WORKSTATIONS};
use agm::projection::duplicate_assignments;
use agm::scheduler::select_next_job;
use agm::sim::{load_scenario, Scenario};
use agm::SchedulerConfig;
use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};
use tower::ServiceExt;

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn scenario(name: &str) -> Scenario {
    load_scenario(manifest_dir().join("scenarios").join(format!("{name}.json"))).expect("bundled scenario")
}

pub fn manual_fleet(start_secs: f64) -> Fleet {
    let clock = Arc::new(ManualClock::new(sim_time(start_secs)));
    Fleet::in_memory(FleetClock::Manual(clock), SchedulerConfig::default())
}

pub async fn call(router: &Router, method: Method, path: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(path)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.map(|b| b.to_string()).unwrap_or_default()))
        .unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

pub fn step(index: usize, op: &str, station_type: &str, group: &str, duration: f64, priority: i64) -> RoutingStep {
    RoutingStep {
        index,
        operation_name: op.into(),
        station_type: station_type.into(),
        worker_group: group.into(),
        process_duration: duration,
        priority,
    }
}

// ---- brute-force oracle over random worlds ----

pub struct OracleWorld {
    pub stations: Vec<Workstation>,
    pub workers: Vec<Worker>,
    pub routings: Vec<Routing>,
    pub instances: Vec<RoutingInstance>,
}

pub fn random_world(rng: &mut StdRng) -> OracleWorld {
    let grid = |rng: &mut StdRng| Pose3::at(rng.gen_range(0..6) as f64, rng.gen_range(0..6) as f64);
    let mut stations = Vec::new();
    let layout = [("IN1", "infeed"), ("IN2", "infeed"), ("A1", "a"), ("A2", "a"), ("A3", "a"), ("B1", "b"), ("B2", "b"), ("OUT", "outfeed")];
    for (id, t) in layout {
        let mut ws = Workstation::new(id, t, grid(rng), rng.gen_range(1..=2));
        ws.occupancy = rng.gen_range(0..=ws.capacity);
        ws.set_down(rng.gen_bool(0.15));
        stations.push(ws);
    }
    let groups = ["g1", "g2"];
    let routing = |id: &str, types: &[&str], rng: &mut StdRng| Routing {
        id: id.into(),
        part_number: format!("P-{id}"),
        customer: String::new(),
        steps: types
            .iter()
            .enumerate()
            .map(|(i, t)| step(i, t, t, groups[rng.gen_range(0..2)], 1.0, rng.gen_range(0..=2)))
            .collect(),
        active: true,
    };
    let routings = vec![
        routing("R1", &["infeed", "a", "b", "outfeed"], rng),
        routing("R2", &["infeed", "b", "outfeed"], rng),
    ];
    let n_instances = rng.gen_range(0..=10);
    let mut instances = Vec::new();
    for k in 0..n_instances {
        let r = &routings[rng.gen_range(0..routings.len())];
        let loc = &stations[rng.gen_range(0..stations.len())].id;
        let mut inst = RoutingInstance::activated(format!("ins-{k:02}"), &r.id, loc, sim_time(rng.gen_range(0..4) as f64));
        inst.current_step = rng.gen_range(0..r.steps.len());
        instances.push(inst);
    }
    let n_workers = rng.gen_range(1..=5);
    let workers = (0..n_workers)
        .map(|i| {
            let mut w = Worker::new(format!("w{i}"), format!("robot {i}"), groups[rng.gen_range(0..2)], sim_time(0.0));
            w.pose = grid(rng);
            w.battery = if rng.gen_bool(0.1) { 0.1 } else { 0.9 };
            w
        })
        .collect();
    OracleWorld { stations, workers, routings, instances }
}

/// Priority, distance, creation millis, instance id, step.
type RankKey = (i64, f64, i64, String, usize);

#[derive(Debug, Clone, PartialEq)]
struct Expected {
    instance_id: String,
    step_index: usize,
    destination: String,
}

/// Literal reading of the ranking rule: `a` beats `b` on higher priority,
/// then smaller distance, then earlier creation, then smaller instance id,
/// then smaller step index.
fn beats(a: &RankKey, b: &RankKey) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    if a.1 != b.1 {
        return a.1 < b.1;
    }
    if a.2 != b.2 {
        return a.2 < b.2;
    }
    if a.3 != b.3 {
        return a.3 < b.3;
    }
    a.4 < b.4
}

/// Loads `world` into a fresh fleet, polls workers in a random order
/// (repeats included) and checks every answer against an independent model.
/// Returns `(polls checked, polls that got a job)`.
pub fn check_oracle_world(seed: u64) -> Result<(usize, usize), String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let world = random_world(&mut rng);
    let fleet = manual_fleet(10.0);
    for s in &world.stations {
        fleet.insert(WORKSTATIONS, &s.id, s, vec![]).unwrap();
    }
    for w in &world.workers {
        fleet.insert(WORKERS, &w.id, w, vec![]).unwrap();
    }
    for r in &world.routings {
        fleet.insert(ROUTINGS, &r.id, r, vec![]).unwrap();
    }
    for i in &world.instances {
        fleet.insert(INSTANCES, &i.id, i, vec![]).unwrap();
    }
    let threshold = fleet.config().battery_threshold;

    let pose_of: HashMap<&str, Pose3> = world.stations.iter().map(|s| (s.id.as_str(), s.pose)).collect();
    let mut occupancy: HashMap<String, u32> = world.stations.iter().map(|s| (s.id.clone(), s.occupancy)).collect();
    let mut awaiting: BTreeSet<String> = world.instances.iter().map(|i| i.id.clone()).collect();
    let mut held: HashMap<String, Expected> = HashMap::new();

    let mut assigned = 0;
    let mut order: Vec<usize> = (0..world.workers.len()).chain(0..world.workers.len()).collect();
    order.shuffle(&mut rng);
    for &wi in &order {
        let w = &world.workers[wi];
        let expected = if let Some(e) = held.get(&w.id) {
            Some(e.clone())
        } else if w.battery < threshold {
            None
        } else {
            let mut best: Option<(RankKey, Expected)> = None;
            for inst in world.instances.iter().filter(|i| awaiting.contains(&i.id)) {
                let routing = world.routings.iter().find(|r| r.id == inst.routing_id).unwrap();
                let st = &routing.steps[inst.current_step];
                if st.worker_group != w.worker_group {
                    continue;
                }
                let mut dest: Option<&Workstation> = None;
                for s in &world.stations {
                    let occ = occupancy[&s.id];
                    if s.station_type != st.station_type || s.is_down() || occ >= s.capacity {
                        continue;
                    }
                    let better = match dest {
                        None => true,
                        Some(d) => occ < occupancy[&d.id] || (occ == occupancy[&d.id] && s.id < d.id),
                    };
                    if better {
                        dest = Some(s);
                    }
                }
                let Some(dest) = dest else { continue };
                let src = pose_of[inst.location.as_str()];
                let (dx, dy, dz) = (w.pose.x - src.x, w.pose.y - src.y, w.pose.z - src.z);
                let key = (
                    st.priority,
                    (dx * dx + dy * dy + dz * dz).sqrt(),
                    inst.created_at.timestamp_millis(),
                    inst.id.clone(),
                    inst.current_step,
                );
                let e = Expected { instance_id: inst.id.clone(), step_index: inst.current_step, destination: dest.id.clone() };
                if best.as_ref().is_none_or(|(k, _)| beats(&key, k)) {
                    best = Some((key, e));
                }
            }
            best.map(|(_, e)| e)
        };

        let payload = select_next_job(&fleet, &w.id, fleet.now()).map_err(|e| e.to_string())?;
        let actual = match &payload.job {
            None => None,
            Some(details) => {
                let job: Versioned<Job> = fleet.load(JOBS, &details.job_id).map_err(|e| e.to_string())?;
                Some(Expected {
                    instance_id: job.value.instance_id,
                    step_index: job.value.step_index,
                    destination: job.value.destination_station,
                })
            }
        };
        if actual != expected {
            return Err(format!("seed {seed}, worker {}: expected {expected:?}, got {actual:?}", w.id));
        }
        if let Some(e) = expected {
            assigned += 1;
            if !held.contains_key(&w.id) {
                awaiting.remove(&e.instance_id);
                *occupancy.get_mut(&e.destination).unwrap() += 1;
                held.insert(w.id.clone(), e);
            }
        }
    }
    Ok((order.len(), assigned))
}

// ---- mutual exclusion ----

/// `workers` threads poll at once for a single task. Returns how many got
/// status 1 and how many duplicate assignments the audit log shows.
pub fn contention_trial(workers: usize) -> (usize, usize) {
    let fleet = Arc::new(manual_fleet(0.0));
    fleet.insert(WORKSTATIONS, "IN", &Workstation::new("IN", "infeed", Pose3::ORIGIN, 4), vec![]).unwrap();
    fleet.insert(WORKSTATIONS, "OUT", &Workstation::new("OUT", "outfeed", Pose3::at(5.0, 0.0), 4), vec![]).unwrap();
    let routing = Routing {
        id: "R".into(),
        part_number: "P".into(),
        customer: String::new(),
        steps: vec![step(0, "load", "infeed", "amr", 0.0, 0), step(1, "ship", "outfeed", "amr", 0.0, 0)],
        active: true,
    };
    fleet.insert(ROUTINGS, "R", &routing, vec![]).unwrap();
    let inst = RoutingInstance::activated("ins-1", "R", "IN", sim_time(0.0));
    fleet.insert(INSTANCES, "ins-1", &inst, vec![]).unwrap();
    for i in 0..workers {
        let w = Worker::new(format!("w{i}"), format!("w{i}"), "amr", sim_time(0.0));
        fleet.insert(WORKERS, &w.id, &w, vec![]).unwrap();
    }
    let barrier = Arc::new(Barrier::new(workers));
    let handles: Vec<_> = (0..workers)
        .map(|i| {
            let (fleet, barrier) = (fleet.clone(), barrier.clone());
            std::thread::spawn(move || {
                barrier.wait();
                select_next_job(&fleet, &format!("w{i}"), fleet.now()).unwrap()
            })
        })
        .collect();
    let winners = handles.into_iter().map(|h| h.join().unwrap()).filter(JobPayload::is_assigned).count();
    let events = fleet.store().read_audit(0);
    let assigned = events.iter().filter(|e| e.kind == AuditKind::TaskAssigned).count();
    (winners, duplicate_assignments(&events).len() + assigned.saturating_sub(1))
}

// ---- protocol golden payloads ----

pub const GOLDEN_CASES: &[&str] = &["unknown_key", "no_work", "job_available", "repoll", "next_step"];

/// Drives a fresh embedded server through the poll cases and returns each
/// raw response body.
pub async fn golden_payloads() -> BTreeMap<&'static str, Value> {
    let (fleet, _) = agm::sim::embedded_server(&Default::default()).unwrap();
    let router = agm::api::router(fleet.clone(), "test");
    let mut out = BTreeMap::new();
    for (id, t, x, cap) in [("IN", "infeed", 0.0, 2), ("M1", "milling", 5.0, 1), ("OUT", "outfeed", 10.0, 1)] {
        let body = json!({"id": id, "station_type": t, "pose": {"x": x, "y": 2.0}, "capacity": cap});
        assert_eq!(call(&router, Method::POST, "/api/workstations", Some(body)).await.0, StatusCode::CREATED);
    }
    let worker = json!({"name": "MIR_robot", "worker_group": "PO Movement"});
    assert_eq!(call(&router, Method::POST, "/api/workers", Some(worker)).await.0, StatusCode::CREATED);
    let routing = json!({"id": "rt-golden", "part_number": "PN-7", "steps": [
        {"index": 0, "operation_name": "load", "station_type": "infeed", "worker_group": "PO Movement", "process_duration": 0},
        {"index": 1, "operation_name": "mill", "station_type": "milling", "worker_group": "PO Movement", "process_duration": 30},
        {"index": 2, "operation_name": "ship", "station_type": "outfeed", "worker_group": "PO Movement", "process_duration": 0}
    ]});
    assert_eq!(call(&router, Method::POST, "/api/routings", Some(routing)).await.0, StatusCode::CREATED);

    let poll = |key: &'static str| {
        let router = router.clone();
        async move { call(&router, Method::GET, &format!("/workerGetNextJob?key={key}"), None).await.1 }
    };
    out.insert("unknown_key", poll("nobody").await);
    out.insert("no_work", poll("wrk-000001").await);
    let act = call(&router, Method::POST, "/api/routings/rt-golden/activate", Some(json!({"quantity": 1}))).await;
    assert_eq!(act.0, StatusCode::CREATED);
    out.insert("job_available", poll("wrk-000001").await);
    out.insert("repoll", poll("wrk-000001").await);
    let done = json!({"key": "wrk-000001", "job_id": "job-000001"});
    assert_eq!(call(&router, Method::POST, "/workerJobComplete", Some(done)).await.1["status"], 1);
    call(&router, Method::POST, "/api/sim/clock", Some(json!({"seconds": 1.0}))).await;
    out.insert("next_step", poll("wrk-000001").await);
    out
}

pub fn golden_file(case: &str) -> Value {
    let path = manifest_dir().join("tests/golden").join(format!("{case}.json"));
    serde_json::from_str(&std::fs::read_to_string(&path).expect("golden file")).expect("golden json")
}

/// For each completed instance: the station types it was processed at, in
/// order, next to its routing's own sequence.
pub fn visit_orders(
    events: &[agm::domain::AuditEvent],
    scenario: &Scenario,
) -> Vec<(String, Vec<String>, Vec<String>)> {
    let types: HashMap<&str, &str> =
        scenario.stations.iter().map(|s| (s.id.as_str(), s.station_type.as_str())).collect();
    let projected = agm::projection::project_instances(events);
    projected
        .iter()
        .filter(|(_, p)| p.phase == InstancePhase::Completed)
        .map(|(id, p)| {
            let routing = scenario.routings.iter().find(|r| r.id == p.routing_id).unwrap();
            let want = routing.steps.iter().map(|s| s.station_type.clone()).collect();
            let got = agm::projection::processing_path(events, id)
                .into_iter()
                .map(|(_, station)| types.get(station.as_str()).unwrap_or(&"?").to_string())
                .collect();
            (id.clone(), want, got)
        })
        .collect()
}
