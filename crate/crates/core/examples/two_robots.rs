//! Same workload with one robot and with two, over several seeds.

use std::path::Path;

use agm::sim::{load_scenario, run_embedded, RunOptions};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let single = load_scenario(dir.join("single_mir.json"))?;
    let dual = load_scenario(dir.join("dual_turtlebot.json"))?;
    println!("seed  single  dual    speedup");
    for seed in 0..5 {
        let opts = RunOptions { seed, ..Default::default() };
        let a = run_embedded(&single, &opts).await?;
        let b = run_embedded(&dual, &opts).await?;
        println!("{seed:<4}  {:>6.1}  {:>6.1}  {:.2}x", a.makespan, b.makespan, a.makespan / b.makespan);
    }
    Ok(())
}
