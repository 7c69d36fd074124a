//! Runs the single-robot scenario against an embedded server and prints the
//! run report.
//!
//! `cargo run --example single_robot -- [seed]`

use std::path::Path;

use agm::sim::{load_scenario, run_embedded, RunOptions};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/single_mir.json");
    let scenario = load_scenario(&path)?;
    let report = run_embedded(&scenario, &RunOptions { seed, ..Default::default() }).await?;
    println!("{}", report.to_table());
    Ok(())
}
