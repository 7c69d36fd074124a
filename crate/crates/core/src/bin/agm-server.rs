use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;

use agm::api::{open_fleet, Server};
use agm::config::ServerConfig;
use agm::sim::{load_scenario, preload};

/// Fleet manager server: worker pull protocol, operator API, audit stream.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// Address to listen on, e.g. 127.0.0.1:8080.
    #[arg(long)]
    listen: Option<String>,
    /// Directory for the document store and audit log.
    #[arg(long, env = "AGM_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// JSON server config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preload workstations, routings and workers from a scenario file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Drive time through POST /api/sim/clock instead of the wall clock.
    #[arg(long)]
    sim_clock: bool,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let args = Args::parse();
    let mut config = match &args.config {
        Some(path) => ServerConfig::from_file(path)?,
        None => ServerConfig::default(),
    };
    if let Some(listen) = args.listen {
        config.listen_address = listen;
    }
    if args.data_dir.is_some() {
        config.data_dir = args.data_dir;
    }
    config.sim_clock |= args.sim_clock;
    config.validate()?;

    let fleet = Arc::new(open_fleet(&config).context("opening data dir")?);
    if let Some(path) = &args.scenario {
        let scenario = load_scenario(path)?;
        preload(&fleet, &scenario).context("preloading scenario")?;
        tracing::info!(scenario = %scenario.name, "preloaded");
    }
    let server = Server::start(fleet, &config).await?;
    println!("listening on {}", server.url());
    shutdown_signal().await;
    server.shutdown().await;
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = tokio::signal::ctrl_c();
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).expect("signal handler");
        tokio::select! {
            _ = ctrl_c => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = ctrl_c.await;
}
