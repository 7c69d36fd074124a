use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;

use agm::api::{open_fleet, Server};
use agm::config::ServerConfig;
use agm::sim::{self, load_scenario, FleetClient, RunOptions, StressOptions, REMOTE_RETRY};

/// Runs a fleet scenario against an embedded or remote server.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulated seconds per step.
    #[arg(long, default_value_t = 0.5)]
    tick: f64,
    #[arg(long, default_value_t = 86_400.0)]
    max_sim_time: f64,
    /// Run against an in-process server (the default without --endpoint).
    #[arg(long, conflicts_with = "endpoint")]
    embed_server: bool,
    /// Base URL of a server started with --sim-clock.
    #[arg(long)]
    endpoint: Option<String>,
    /// Concurrent jittered workers over real HTTP instead of a timed run.
    #[arg(long)]
    stress: bool,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> anyhow::Result<ExitCode> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .init();
    let args = Args::parse();
    let scenario = load_scenario(&args.scenario)?;

    let (json, ok) = if args.stress {
        let opts = StressOptions { seed: args.seed, ..Default::default() };
        let report = match &args.endpoint {
            Some(url) => sim::stress(&scenario, url, &opts).await?,
            None => {
                let config = ServerConfig { listen_address: "127.0.0.1:0".into(), sim_clock: true, ..Default::default() };
                let server = Server::start(Arc::new(open_fleet(&config)?), &config).await?;
                let report = sim::stress(&scenario, &server.url(), &opts).await;
                server.shutdown().await;
                report?
            }
        };
        println!(
            "stress seed {}: {} workers, {} polls, {} assignments, {}/{} instances, {} duplicates, {} capacity violations, {} bad traces, {:.2} s",
            report.seed,
            report.workers,
            report.polls,
            report.assignments,
            report.completed_instances,
            report.total_instances,
            report.duplicate_assignments.len(),
            report.capacity_violations,
            report.invalid_traces.len(),
            report.wall_seconds
        );
        (serde_json::to_string_pretty(&report)?, report.passed())
    } else {
        let opts = RunOptions { seed: args.seed, tick: args.tick, max_sim_time: args.max_sim_time, ..Default::default() };
        let report = match &args.endpoint {
            Some(url) => sim::run(&scenario, &FleetClient::http(url, REMOTE_RETRY), &opts).await?,
            None => sim::run_embedded(&scenario, &opts).await?,
        };
        print!("{}", report.to_table());
        (serde_json::to_string_pretty(&report)?, report.complete)
    };
    if let Some(path) = &args.report {
        std::fs::write(path, json + "\n")?;
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
