//! Many concurrent HTTP workers with jittered timing against one server,
//! followed by the audit-log safety checks.
//!
//! `cargo run --example stress -- [seed]`

use std::path::Path;
use std::sync::Arc;

use agm::api::{open_fleet, Server};
use agm::config::ServerConfig;
use agm::sim::{load_scenario, stress, StressOptions};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let config = ServerConfig { listen_address: "127.0.0.1:0".into(), sim_clock: true, ..Default::default() };
    let server = Server::start(Arc::new(open_fleet(&config)?), &config).await?;
    let scenario = load_scenario(Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/dual_turtlebot.json"))?;
    let report = stress(&scenario, &server.url(), &StressOptions { seed, ..Default::default() }).await?;
    server.shutdown().await;
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!("{}", if report.passed() { "passed" } else { "FAILED" });
    Ok(())
}
