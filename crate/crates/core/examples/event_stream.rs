//! Follows the server-sent event stream a dashboard would subscribe to while
//! a simulated robot works through a scenario over real HTTP.

use std::path::Path;
use std::sync::Arc;

use agm::api::{open_fleet, Server};
use agm::config::ServerConfig;
use agm::sim::{load_scenario, run, FleetClient, RunOptions, REMOTE_RETRY};
use futures::StreamExt;
use serde_json::Value;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ServerConfig { listen_address: "127.0.0.1:0".into(), sim_clock: true, ..Default::default() };
    let server = Server::start(Arc::new(open_fleet(&config)?), &config).await?;
    let url = server.url();
    println!("server at {url}");

    let resp = reqwest::get(format!("{url}/api/events")).await?.error_for_status()?;
    let scenario = load_scenario(Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/single_mir.json"))?;
    let client = FleetClient::http(&url, REMOTE_RETRY);
    let sim = tokio::spawn(async move { run(&scenario, &client, &RunOptions::default()).await });

    let mut body = resp.bytes_stream();
    let mut buf = String::new();
    let mut shown = 0;
    while shown < 40 {
        let Some(chunk) = body.next().await else { break };
        buf.push_str(&String::from_utf8_lossy(&chunk?));
        while let Some(end) = buf.find("\n\n") {
            let frame: String = buf.drain(..end + 2).collect();
            let mut id = "";
            let mut kind = "";
            let mut data = Value::Null;
            for line in frame.lines() {
                if let Some(v) = line.strip_prefix("id: ") {
                    id = v;
                } else if let Some(v) = line.strip_prefix("event: ") {
                    kind = v;
                } else if let Some(v) = line.strip_prefix("data: ") {
                    data = serde_json::from_str(v)?;
                }
            }
            if id.is_empty() {
                continue;
            }
            let action = data["payload"]["action"].as_str().unwrap_or("-");
            println!("#{id:<4} {kind:<18} {:<12} {action}", data["subject_id"].as_str().unwrap_or(""));
            shown += 1;
        }
    }
    drop(body);
    let report = sim.await??;
    println!("... run finished with {} events, makespan {:.1} s", report.event_count, report.makespan);
    server.shutdown().await;
    Ok(())
}
