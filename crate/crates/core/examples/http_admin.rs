//! The management calls a dashboard makes over HTTP: CRUD, activation,
//! taking a station down and freeing it, cancelling an instance.

use std::sync::Arc;

use agm::api::{open_fleet, Server};
use agm::config::ServerConfig;
use reqwest::{Client, Method};
use serde_json::{json, Value};

async fn send(http: &Client, method: Method, url: String, body: Option<Value>) -> reqwest::Result<Value> {
    let mut req = http.request(method.clone(), &url);
    if let Some(body) = body {
        req = req.json(&body);
    }
    let resp = req.send().await?;
    let status = resp.status();
    let value = resp.json::<Value>().await.unwrap_or(Value::Null);
    println!("{method} {} -> {status}", url.split_once("/api").map_or(url.as_str(), |(_, p)| p));
    Ok(value)
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ServerConfig { listen_address: "127.0.0.1:0".into(), sim_clock: true, ..Default::default() };
    let server = Server::start(Arc::new(open_fleet(&config)?), &config).await?;
    let api = format!("{}/api", server.url());
    let http = Client::new();

    for (id, kind, x) in [("IN", "infeed", 0.0), ("M1", "milling", 5.0), ("OUT", "outfeed", 10.0)] {
        let body = json!({"id": id, "station_type": kind, "pose": {"x": x, "y": 0.0}, "capacity": 1});
        send(&http, Method::POST, format!("{api}/workstations"), Some(body)).await?;
    }
    let worker = send(&http, Method::POST, format!("{api}/workers"), Some(json!({"name": "amr-1", "worker_group": "amr"}))).await?;
    let step = |i: usize, op: &str, kind: &str| {
        json!({"index": i, "operation_name": op, "station_type": kind, "worker_group": "amr", "process_duration": 10.0, "priority": 0})
    };
    let routing = json!({"id": "demo", "part_number": "PN-1", "steps": [step(0, "load", "infeed"), step(1, "mill", "milling"), step(2, "unload", "outfeed")]});
    send(&http, Method::POST, format!("{api}/routings"), Some(routing)).await?;
    let activated = send(&http, Method::POST, format!("{api}/routings/demo/activate"), Some(json!({"quantity": 2}))).await?;
    println!("  instances {}", activated["instance_ids"]);

    let m1 = send(&http, Method::PUT, format!("{api}/workstations/M1"), Some(json!({"state": "down"}))).await?;
    println!("  M1 is {}", m1["state"]);
    let key = worker["id"].as_str().unwrap_or_default();
    let poll = http.get(format!("{}/workerGetNextJob?key={key}", server.url())).send().await?.json::<Value>().await?;
    println!("  poll with M1 down still hands out the infeed pick-up: {}", poll["operation_name"]);
    send(&http, Method::PUT, format!("{api}/workstations/M1"), Some(json!({"state": "free"}))).await?;

    let second = activated["instance_ids"][1].as_str().unwrap_or_default();
    let cancelled = send(&http, Method::POST, format!("{api}/instances/{second}/cancel"), None).await?;
    println!("  {second} is {}", cancelled["phase"]);
    let status = send(&http, Method::GET, format!("{api}/status"), None).await?;
    println!("  {status}");
    server.shutdown().await;
    Ok(())
}
