//! The durable document store: optimistic-concurrency writes, filtered
//! queries, and state that survives closing and reopening the directory.

use serde_json::json;

use agm::store::{Filter, Store};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    {
        let store = Store::open(dir.path(), &["stations"])?;
        let v0 = store.put("stations", "M1", json!({"type": "milling", "occupancy": 0}), None)?;
        store.put("stations", "M2", json!({"type": "milling", "occupancy": 1}), None)?;
        store.put("stations", "G1", json!({"type": "grinding", "occupancy": 0}), None)?;

        let v1 = store.put("stations", "M1", json!({"type": "milling", "occupancy": 1}), Some(v0))?;
        // a second writer still holding version 0 loses
        let stale = store.put("stations", "M1", json!({"type": "milling", "occupancy": 5}), Some(v0));
        println!("M1 v{v0} -> v{v1}; stale write: {}", stale.unwrap_err());

        let busy = store.query("stations", &Filter::eq("type", "milling").and(Filter::range("occupancy", Some(1.0), None)))?;
        println!("busy milling stations: {:?}", busy.iter().map(|d| &d.id).collect::<Vec<_>>());
        store.compact()?;
    }

    let reopened = Store::open(dir.path(), &["stations"])?;
    let m1 = reopened.get("stations", "M1")?;
    println!("after reopen: M1 v{} {}", m1.version, m1.body);
    for entry in std::fs::read_dir(dir.path())? {
        let entry = entry?;
        println!("  {} ({} bytes)", entry.file_name().to_string_lossy(), entry.metadata()?.len());
    }
    Ok(())
}
