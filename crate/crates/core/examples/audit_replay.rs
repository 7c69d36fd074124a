//! Rebuilds instance state and per-part machine paths from nothing but the
//! audit log of a finished run, then checks the log's invariants.

use std::collections::BTreeMap;
use std::path::Path;

use agm::config::ServerConfig;
use agm::projection::{capacity_violations, check_trace, duplicate_assignments, instance_traces, processing_path, project_instances};
use agm::sim::{embedded_server, load_scenario, run, RunOptions};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = load_scenario(Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/dual_turtlebot.json"))?;
    let (fleet, client) = embedded_server(&ServerConfig::default())?;
    run(&scenario, &client, &RunOptions::default()).await?;

    let events = fleet.store().read_audit(0);
    println!("{} events", events.len());
    for (id, inst) in project_instances(&events) {
        let path: Vec<String> = processing_path(&events, &id).into_iter().map(|(step, station)| format!("{step}:{station}")).collect();
        println!("{id} {} {:?} via {}", inst.routing_id, inst.phase, path.join(" "));
    }

    let steps: BTreeMap<_, _> = scenario.routings.iter().map(|r| (r.id.clone(), r.steps.len())).collect();
    let projected = project_instances(&events);
    let bad_traces = instance_traces(&events)
        .into_iter()
        .filter(|(id, trace)| check_trace(trace, steps[&projected[id].routing_id]).is_err())
        .count();
    println!("capacity violations: {}", capacity_violations(&events).len());
    println!("duplicate assignments: {}", duplicate_assignments(&events).len());
    println!("malformed instance traces: {bad_traces}");
    Ok(())
}
