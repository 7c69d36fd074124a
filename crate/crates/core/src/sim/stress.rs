use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{FleetClient, Scenario, SimError, WorkerSpec};
use crate::domain::JobPhase;
use crate::projection::{capacity_violations, check_trace, duplicate_assignments, instance_traces, project_instances};
use crate::workflow::ProgressReport;

#[derive(Debug, Clone, PartialEq)]
pub struct StressOptions {
    pub seed: u64,
    /// Multiplies every activation's quantity.
    pub quantity_scale: i64,
    /// Extra workers registered in the first worker's group.
    pub extra_workers: usize,
    /// Upper bound of the random pause between a worker's requests.
    pub max_jitter: Duration,
    /// Simulated seconds added per clock tick.
    pub clock_step: f64,
    pub clock_period: Duration,
    pub timeout: Duration,
}

impl Default for StressOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            quantity_scale: 2,
            extra_workers: 6,
            max_jitter: Duration::from_millis(3),
            clock_step: 5.0,
            clock_period: Duration::from_millis(5),
            timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressReport {
    pub seed: u64,
    pub workers: usize,
    pub wall_seconds: f64,
    pub polls: u64,
    pub assignments: u64,
    pub total_instances: usize,
    pub completed_instances: usize,
    pub duplicate_assignments: Vec<(String, usize)>,
    pub capacity_violations: usize,
    /// `instance: reason` for traces that break the step pattern.
    pub invalid_traces: Vec<String>,
}

impl StressReport {
    pub fn passed(&self) -> bool {
        self.completed_instances == self.total_instances
            && self.duplicate_assignments.is_empty()
            && self.capacity_violations == 0
            && self.invalid_traces.is_empty()
    }
}

#[derive(Default)]
struct Counters {
    polls: AtomicU64,
    assignments: AtomicU64,
}

async fn pause(rng: &mut StdRng, max: Duration) {
    let ms = rng.gen_range(0..=max.as_millis() as u64);
    tokio::time::sleep(Duration::from_millis(ms)).await;
}

async fn worker_loop(
    client: FleetClient,
    key: String,
    mut rng: StdRng,
    max_jitter: Duration,
    stop: Arc<AtomicBool>,
    counters: Arc<Counters>,
) -> Result<(), SimError> {
    while !stop.load(Ordering::Relaxed) {
        counters.polls.fetch_add(1, Ordering::Relaxed);
        let payload = client.get_next_job(&key).await?;
        let Some(job) = payload.job else {
            pause(&mut rng, max_jitter).await;
            continue;
        };
        counters.assignments.fetch_add(1, Ordering::Relaxed);
        let mut accepted = true;
        for phase in [JobPhase::EnRouteToSource, JobPhase::Carrying, JobPhase::Delivered] {
            pause(&mut rng, max_jitter).await;
            let pose = Some(if phase == JobPhase::EnRouteToSource { job.source } else { job.destination });
            let report = ProgressReport { key: key.clone(), job_id: job.job_id.clone(), phase, pose, battery: None };
            if !client.progress(&report).await?.is_ok() {
                accepted = false;
                break;
            }
        }
        if accepted {
            client.complete(&key, &job.job_id).await?;
        }
    }
    Ok(())
}

/// Hammers a live server with concurrent workers on jittered timing, then
/// checks the audit log for double assignment, capacity overruns and
/// out-of-order instance histories. The server must run on a manual clock.
pub async fn stress(scenario: &Scenario, base_url: &str, opts: &StressOptions) -> Result<StressReport, SimError> {
    scenario.validate()?;
    let client = FleetClient::http(base_url, Duration::from_secs(5));
    let started = Instant::now();
    for s in &scenario.stations {
        client.ensure_station(s).await?;
    }
    let mut specs: Vec<WorkerSpec> = scenario.workers.clone();
    if let Some(first) = scenario.workers.first() {
        for n in 0..opts.extra_workers {
            specs.push(WorkerSpec { name: format!("stress-{n:02}"), ..first.clone() });
        }
    }
    let mut keys = Vec::new();
    for w in &specs {
        keys.push(client.ensure_worker(w).await?);
    }
    for r in &scenario.routings {
        client.ensure_routing(r).await?;
    }
    let mut expected = Vec::new();
    for (n, a) in scenario.activations.iter().enumerate() {
        let key = format!("stress-{}-{n}", opts.seed);
        expected.extend(client.activate(&a.routing_id, a.quantity * opts.quantity_scale, &key).await?);
    }

    let stop = Arc::new(AtomicBool::new(false));
    let counters = Arc::new(Counters::default());
    let mut tasks = Vec::new();
    for (i, key) in keys.iter().enumerate() {
        let rng = StdRng::seed_from_u64(opts.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64));
        // each worker gets its own connection pool
        let own = FleetClient::http(base_url, Duration::from_secs(5));
        tasks.push(tokio::spawn(worker_loop(own, key.clone(), rng, opts.max_jitter, stop.clone(), counters.clone())));
    }
    let clock = {
        let (client, stop, step, period) = (client.clone(), stop.clone(), opts.clock_step, opts.clock_period);
        tokio::spawn(async move {
            let mut t = 0.0;
            while !stop.load(Ordering::Relaxed) {
                t += step;
                client.set_clock(t).await?;
                tokio::time::sleep(period).await;
            }
            Ok::<_, SimError>(())
        })
    };

    let mut completed = 0;
    while started.elapsed() < opts.timeout {
        tokio::time::sleep(Duration::from_millis(50)).await;
        let instances = client.instances().await?;
        completed = instances.iter().filter(|i| expected.contains(&i.value.id) && i.value.phase.is_terminal()).count();
        if completed == expected.len() || tasks.iter().any(|t| t.is_finished()) {
            break;
        }
    }
    stop.store(true, Ordering::Relaxed);
    for task in tasks {
        task.await.map_err(|e| SimError::Io(std::io::Error::other(e)))??;
    }
    clock.await.map_err(|e| SimError::Io(std::io::Error::other(e)))??;

    let events = client.audit(0).await?;
    let steps: BTreeMap<&str, usize> = scenario.routings.iter().map(|r| (r.id.as_str(), r.steps.len())).collect();
    let projected = project_instances(&events);
    let invalid_traces = instance_traces(&events)
        .into_iter()
        .filter_map(|(id, trace)| {
            let n = projected.get(&id).and_then(|p| steps.get(p.routing_id.as_str())).copied()?;
            check_trace(&trace, n).err().map(|why| format!("{id}: {why}"))
        })
        .collect();
    Ok(StressReport {
        seed: opts.seed,
        workers: keys.len(),
        wall_seconds: started.elapsed().as_secs_f64(),
        polls: counters.polls.load(Ordering::Relaxed),
        assignments: counters.assignments.load(Ordering::Relaxed),
        total_instances: expected.len(),
        completed_instances: completed,
        duplicate_assignments: duplicate_assignments(&events),
        capacity_violations: capacity_violations(&events).len(),
        invalid_traces,
    })
}
