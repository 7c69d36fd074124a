//! One part through a two-step routing, driven by direct library calls on a
//! manual clock: register, activate, poll, report, complete.

use std::sync::Arc;

use agm::admin::{create_routing, create_worker, create_workstation, NewRouting, NewWorker, NewWorkstation};
use agm::clock::{sim_epoch, ManualClock};
use agm::domain::{JobPhase, Pose3, RoutingStep};
use agm::scheduler::select_next_job;
use agm::workflow::{activate_routing, advance_processing, job_complete, job_progress, ActivateRequest, ProgressReport};
use agm::{Fleet, FleetClock, SchedulerConfig};

fn station(id: &str, station_type: &str, x: f64) -> NewWorkstation {
    NewWorkstation {
        id: Some(id.into()),
        name: None,
        station_type: station_type.into(),
        pose: Pose3::at(x, 0.0),
        capacity: 1,
        down: false,
    }
}

fn step(index: usize, op: &str, station_type: &str, seconds: f64) -> RoutingStep {
    RoutingStep {
        index,
        operation_name: op.into(),
        station_type: station_type.into(),
        worker_group: "amr".into(),
        process_duration: seconds,
        priority: 0,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let clock = Arc::new(ManualClock::at_epoch());
    let fleet = Fleet::in_memory(FleetClock::Manual(clock.clone()), SchedulerConfig::default());
    let now = sim_epoch();

    for s in [station("IN", "infeed", 0.0), station("MILL", "milling", 4.0), station("OUT", "outfeed", 8.0)] {
        create_workstation(&fleet, &s, now)?;
    }
    let worker = create_worker(
        &fleet,
        &NewWorker { name: "amr-1".into(), worker_group: "amr".into(), pose: None, battery: None, address: None, port: None },
        now,
    )?
    .value;
    let routing = create_routing(
        &fleet,
        &NewRouting {
            id: Some("bracket".into()),
            part_number: "PN-42".into(),
            customer: "example".into(),
            steps: vec![step(0, "load", "infeed", 0.0), step(1, "mill", "milling", 30.0), step(2, "unload", "outfeed", 0.0)],
        },
    )?
    .value;
    let ids = activate_routing(&fleet, &routing.id, &ActivateRequest { quantity: 1, key: None }, now)?;
    println!("activated {ids:?}");

    loop {
        let now = fleet.now();
        advance_processing(&fleet, now)?;
        let payload = select_next_job(&fleet, &worker.id, now)?;
        let Some(job) = payload.job else {
            let instance = fleet.load::<agm::domain::RoutingInstance>(agm::fleet::INSTANCES, &ids[0])?.value;
            if instance.phase.is_terminal() {
                println!("t={now}: {} is {:?}", instance.id, instance.phase);
                break;
            }
            clock.advance(10.0);
            continue;
        };
        println!("t={now}: {} {} {:?} -> {:?}", job.job_id, job.operation_name, job.source, job.destination);
        for phase in [JobPhase::EnRouteToSource, JobPhase::Carrying, JobPhase::Delivered] {
            let report = ProgressReport { key: worker.id.clone(), job_id: job.job_id.clone(), phase, pose: None, battery: None };
            job_progress(&fleet, &report, fleet.now())?;
        }
        job_complete(&fleet, &worker.id, &job.job_id, fleet.now())?;
    }
    println!("{} audit events", fleet.store().audit_len());
    Ok(())
}
