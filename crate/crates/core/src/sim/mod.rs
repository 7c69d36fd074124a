//! Discrete-time fleet simulator. Robots drive straight lines at constant
//! speed and talk to the server through the same HTTP API real workers
//! use; the server runs on a manual clock the simulator advances.

mod client;
mod report;
mod robot;
mod scenario;
mod stress;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::api;
use crate::clock::sim_time;
use crate::config::ServerConfig;
use crate::domain::{JobDetails, JobPhase};
use crate::fleet::{Fleet, FleetError};
use crate::workflow::ProgressReport;

pub use client::{ClientError, FleetClient};
pub use report::{makespan, station_busy_time, RunReport, StationReport, StuckInstance, WorkerReport};
pub use robot::{step_robot, Leg, LegPurpose, ProtocolAction, RobotState, StepOutcome};
pub use scenario::{
    load_scenario, parse_scenario, preload, Activation, RoutingSpec, Scenario, ScenarioError, StationSpec, WorkerSpec,
};
pub use stress::{stress, StressOptions, StressReport};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Seeds each robot's poll phase.
    pub seed: u64,
    /// Simulated seconds per step.
    pub tick: f64,
    /// How often an idle robot asks for work.
    pub poll_interval: f64,
    /// How often a busy robot reports its pose.
    pub report_interval: f64,
    /// Give up after this many simulated seconds.
    pub max_sim_time: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { seed: 0, tick: 0.5, poll_interval: 1.0, report_interval: 5.0, max_sim_time: 86_400.0 }
    }
}

/// An in-memory server on a manual clock, reached without sockets.
pub fn embedded_server(config: &ServerConfig) -> Result<(Arc<Fleet>, FleetClient), FleetError> {
    let config = ServerConfig { sim_clock: true, ..config.clone() };
    let fleet = Arc::new(api::open_fleet(&config)?);
    let client = FleetClient::in_process(api::router(fleet.clone(), config.org_id));
    Ok((fleet, client))
}

struct ActiveJob {
    details: JobDetails,
    phase: JobPhase,
}

struct Robot {
    id: String,
    name: String,
    kin: RobotState,
    job: Option<ActiveJob>,
    next_poll: f64,
    last_report: f64,
    stats: WorkerReport,
}

impl Robot {
    async fn report(&mut self, client: &FleetClient, phase: JobPhase, t: f64) -> Result<bool, ClientError> {
        let Some(job) = &self.job else { return Ok(false) };
        let report = ProgressReport {
            key: self.id.clone(),
            job_id: job.details.job_id.clone(),
            phase,
            pose: Some(self.kin.pose),
            battery: Some(self.kin.battery),
        };
        self.last_report = t;
        let ack = client.progress(&report).await?;
        if !ack.is_ok() {
            // the job was taken back (e.g. reclaimed); drop it and ask again
            tracing::info!(robot = %self.name, reason = ?ack.reason, "job dropped");
            self.job = None;
            self.kin.leg = None;
            self.next_poll = t;
        }
        Ok(ack.is_ok())
    }

    /// One round of protocol traffic at time `t`.
    async fn act(&mut self, client: &FleetClient, t: f64, opts: &RunOptions) -> Result<(), ClientError> {
        if let Some(job) = &self.job {
            if self.kin.leg.is_none() {
                match job.phase {
                    JobPhase::Assigned | JobPhase::EnRouteToSource => {
                        let target = job.details.destination;
                        if self.report(client, JobPhase::Carrying, t).await? {
                            self.job.as_mut().expect("job").phase = JobPhase::Carrying;
                            self.kin.leg = Some(Leg { target, purpose: LegPurpose::ToDestination });
                        }
                    }
                    JobPhase::Carrying | JobPhase::Delivered => {
                        let job_id = job.details.job_id.clone();
                        if self.report(client, JobPhase::Delivered, t).await? {
                            client.complete(&self.id, &job_id).await?;
                            self.stats.jobs_completed += 1;
                            self.job = None;
                            self.next_poll = t;
                        }
                    }
                }
            }
        }
        if self.job.is_none() && t >= self.next_poll {
            let payload = client.get_next_job(&self.id).await?;
            match payload.job {
                Some(details) => {
                    let target = details.source;
                    self.job = Some(ActiveJob { details, phase: JobPhase::EnRouteToSource });
                    if self.report(client, JobPhase::EnRouteToSource, t).await? {
                        self.kin.leg = Some(Leg { target, purpose: LegPurpose::ToSource });
                    }
                }
                None => self.next_poll = t + opts.poll_interval,
            }
        } else if let Some(job) = &self.job {
            if t - self.last_report >= opts.report_interval {
                let phase = job.phase;
                self.report(client, phase, t).await?;
            }
        }
        Ok(())
    }
}

/// Runs a scenario to completion (or `max_sim_time`).
pub async fn run(scenario: &Scenario, client: &FleetClient, opts: &RunOptions) -> Result<RunReport, SimError> {
    run_with_hook(scenario, client, opts, |_| {}).await
}

/// Like [`run`], calling `on_tick(t)` after each step's protocol traffic.
pub async fn run_with_hook(
    scenario: &Scenario,
    client: &FleetClient,
    opts: &RunOptions,
    mut on_tick: impl FnMut(f64),
) -> Result<RunReport, SimError> {
    scenario.validate()?;
    client.set_clock(0.0).await?;
    for s in &scenario.stations {
        client.ensure_station(s).await?;
    }
    let mut robots = Vec::new();
    let mut rng = StdRng::seed_from_u64(opts.seed);
    let phases = ((opts.poll_interval / opts.tick).round() as u64).max(1);
    for w in &scenario.workers {
        let id = client.ensure_worker(w).await?;
        robots.push(Robot {
            id: id.clone(),
            name: w.name.clone(),
            kin: RobotState {
                pose: w.start_pose,
                speed: w.speed,
                battery: w.battery_start,
                drain_per_meter: w.battery_drain_per_meter,
                leg: None,
            },
            job: None,
            next_poll: rng.gen_range(0..phases) as f64 * opts.tick,
            last_report: 0.0,
            stats: WorkerReport {
                worker_id: id,
                distance_traveled: 0.0,
                jobs_completed: 0,
                idle_time: 0.0,
                final_battery: w.battery_start,
            },
        });
    }
    robots.sort_by(|a, b| a.id.cmp(&b.id));
    for r in &scenario.routings {
        client.ensure_routing(r).await?;
    }

    let mut pending: Vec<(usize, &Activation)> = scenario.activations.iter().enumerate().collect();
    pending.sort_by(|a, b| a.1.at_time.total_cmp(&b.1.at_time).then(a.0.cmp(&b.0)));
    let mut pending = pending.into_iter().peekable();
    let mut expected: BTreeSet<String> = BTreeSet::new();
    let mut terminal: BTreeSet<String> = BTreeSet::new();
    let mut step = 0u64;
    let t_end = loop {
        let t = step as f64 * opts.tick;
        client.set_clock(t).await?;
        while let Some((n, a)) = pending.next_if(|(_, a)| a.at_time <= t) {
            let key = format!("{}-{n}", scenario.name);
            expected.extend(client.activate(&a.routing_id, a.quantity, &key).await?);
        }
        for robot in robots.iter_mut() {
            robot.act(client, t, opts).await?;
        }
        on_tick(t);

        if pending.peek().is_none() {
            if terminal.len() < expected.len() {
                terminal = client
                    .instances()
                    .await?
                    .into_iter()
                    .filter(|i| i.value.phase.is_terminal() && expected.contains(&i.value.id))
                    .map(|i| i.value.id)
                    .collect();
            }
            if terminal.len() == expected.len() {
                break t;
            }
        }
        if t >= opts.max_sim_time {
            break t;
        }
        for robot in robots.iter_mut() {
            if robot.job.is_none() {
                robot.stats.idle_time += opts.tick;
            }
            let out = step_robot(&robot.kin, opts.tick);
            robot.kin = out.state;
            robot.stats.distance_traveled += out.moved;
        }
        step += 1;
    };

    let events = client.audit(0).await?;
    let instances = client.instances().await?;
    let makespan = makespan(&events);
    let busy = station_busy_time(&events, sim_time(t_end));
    let stations = client
        .workstations()
        .await?
        .into_iter()
        .map(|s| {
            let s = s.value;
            let busy_time = busy.get(&s.id).copied().unwrap_or(0.0);
            let denom = f64::from(s.capacity) * makespan;
            let utilization = if denom > 0.0 { (busy_time / denom).min(1.0) } else { 0.0 };
            (s.id, StationReport { station_type: s.station_type, capacity: s.capacity, busy_time, utilization })
        })
        .collect();
    let stuck_instances: Vec<StuckInstance> = instances
        .iter()
        .map(|i| &i.value)
        .filter(|i| expected.contains(&i.id) && !i.phase.is_terminal())
        .map(|i| StuckInstance {
            id: i.id.clone(),
            routing_id: i.routing_id.clone(),
            current_step: i.current_step,
            phase: i.phase,
            location: i.location.clone(),
        })
        .collect();
    let completed_instances = instances
        .iter()
        .filter(|i| expected.contains(&i.value.id) && i.value.phase == crate::domain::InstancePhase::Completed)
        .count();
    let workers: BTreeMap<String, WorkerReport> = robots
        .into_iter()
        .map(|mut r| {
            r.stats.final_battery = r.kin.battery;
            (r.name, r.stats)
        })
        .collect();
    Ok(RunReport {
        scenario: scenario.name.clone(),
        seed: opts.seed,
        complete: stuck_instances.is_empty() && pending.peek().is_none(),
        makespan,
        sim_time: t_end,
        total_instances: expected.len(),
        completed_instances,
        stuck_instances,
        event_count: events.len() as u64,
        workers,
        stations,
    })
}

/// Runs a scenario against a fresh embedded server.
pub async fn run_embedded(scenario: &Scenario, opts: &RunOptions) -> Result<RunReport, SimError> {
    let (_fleet, client) = embedded_server(&ServerConfig::default())?;
    run(scenario, &client, opts).await
}

/// Default retry window for remote endpoints.
pub const REMOTE_RETRY: Duration = Duration::from_secs(30);
