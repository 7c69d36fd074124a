use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;
use tower::ServiceExt;

use crate::api::{ActivateResponse, ClockRequest, ClockResponse, CompleteRequest};
use crate::domain::{AuditEvent, JobPayload, Routing, RoutingInstance, Worker, Workstation};
use crate::fleet::Versioned;
use crate::sim::scenario::{RoutingSpec, StationSpec, WorkerSpec};
use crate::workflow::{Ack, ActivateRequest, ProgressReport};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{method} {path}: HTTP {status}: {body}")]
    Status { method: Method, path: String, status: u16, body: String },
    #[error("{method} {path}: {message}")]
    Transport { method: Method, path: String, message: String },
    #[error("{method} {path}: cannot decode response: {source}")]
    Decode { method: Method, path: String, source: serde_json::Error },
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[derive(Clone)]
enum Transport {
    InProcess(Router),
    Http { client: reqwest::Client, base: String, retry_for: Duration },
}

/// Speaks the server's HTTP API, either to a router in the same process
/// or to a remote endpoint.
#[derive(Clone)]
pub struct FleetClient {
    transport: Transport,
}

impl FleetClient {
    pub fn in_process(router: Router) -> Self {
        Self { transport: Transport::InProcess(router) }
    }

    /// Requests that fail before any response arrives (refused, reset) are
    /// retried for up to `retry_for`, which rides out a server restart.
    /// Every call the simulator makes is safe to repeat.
    pub fn http(base: impl Into<String>, retry_for: Duration) -> Self {
        let client = reqwest::Client::builder()
            .connect_timeout(Duration::from_secs(2))
            .timeout(Duration::from_secs(30))
            .build()
            .expect("HTTP client");
        let base = base.into().trim_end_matches('/').to_string();
        Self { transport: Transport::Http { client, base, retry_for } }
    }

    async fn send(&self, method: Method, path: &str, body: Option<Value>) -> Result<(StatusCode, Vec<u8>), ClientError> {
        let transport_err = |message: String| ClientError::Transport { method: method.clone(), path: path.into(), message };
        match &self.transport {
            Transport::InProcess(router) => {
                let bytes = body.map(|b| b.to_string()).unwrap_or_default();
                let req = Request::builder()
                    .method(method.clone())
                    .uri(path)
                    .header(header::CONTENT_TYPE, "application/json")
                    .body(Body::from(bytes))
                    .map_err(|e| transport_err(e.to_string()))?;
                let resp = router.clone().oneshot(req).await.map_err(|e| transport_err(e.to_string()))?;
                let status = resp.status();
                let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
                    .await
                    .map_err(|e| transport_err(e.to_string()))?;
                Ok((status, bytes.to_vec()))
            }
            Transport::Http { client, base, retry_for } => {
                let started = Instant::now();
                loop {
                    let mut req = client.request(method.clone(), format!("{base}{path}"));
                    if let Some(b) = &body {
                        req = req.json(b);
                    }
                    let attempt = async {
                        let resp = req.send().await?;
                        let status = resp.status();
                        Ok::<_, reqwest::Error>((status, resp.bytes().await?.to_vec()))
                    };
                    match attempt.await {
                        Ok(out) => return Ok(out),
                        Err(e) if started.elapsed() < *retry_for => {
                            tracing::debug!(error = %e, path, "retrying");
                            tokio::time::sleep(Duration::from_millis(100)).await;
                        }
                        Err(e) => return Err(transport_err(e.to_string())),
                    }
                }
            }
        }
    }

    async fn call<T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<Value>) -> Result<T, ClientError> {
        let (status, bytes) = self.send(method.clone(), path, body).await?;
        if !status.is_success() {
            return Err(ClientError::Status {
                method,
                path: path.into(),
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).into_owned(),
            });
        }
        serde_json::from_slice(&bytes).map_err(|source| ClientError::Decode { method, path: path.into(), source })
    }

    fn json<T: Serialize>(value: &T) -> Option<Value> {
        Some(serde_json::to_value(value).expect("request encodes"))
    }

    pub async fn get_next_job(&self, key: &str) -> Result<JobPayload, ClientError> {
        self.call(Method::GET, &format!("/workerGetNextJob?key={}", encode(key)), None).await
    }

    pub async fn progress(&self, report: &ProgressReport) -> Result<Ack, ClientError> {
        self.call(Method::POST, "/workerJobProgress", Self::json(report)).await
    }

    pub async fn complete(&self, key: &str, job_id: &str) -> Result<Ack, ClientError> {
        let req = CompleteRequest { key: key.into(), job_id: job_id.into() };
        self.call(Method::POST, "/workerJobComplete", Self::json(&req)).await
    }

    pub async fn set_clock(&self, seconds: f64) -> Result<ClockResponse, ClientError> {
        let req = ClockRequest { now: None, seconds: Some(seconds) };
        self.call(Method::POST, "/api/sim/clock", Self::json(&req)).await
    }

    pub async fn activate(&self, routing_id: &str, quantity: i64, key: &str) -> Result<Vec<String>, ClientError> {
        let req = ActivateRequest { quantity, key: Some(key.into()) };
        let path = format!("/api/routings/{}/activate", encode(routing_id));
        let resp: ActivateResponse = self.call(Method::POST, &path, Self::json(&req)).await?;
        Ok(resp.instance_ids)
    }

    pub async fn workers(&self) -> Result<Vec<Versioned<Worker>>, ClientError> {
        self.call(Method::GET, "/api/workers", None).await
    }

    pub async fn workstations(&self) -> Result<Vec<Versioned<Workstation>>, ClientError> {
        self.call(Method::GET, "/api/workstations", None).await
    }

    pub async fn instances(&self) -> Result<Vec<Versioned<RoutingInstance>>, ClientError> {
        self.call(Method::GET, "/api/instances", None).await
    }

    pub async fn audit(&self, since: u64) -> Result<Vec<AuditEvent>, ClientError> {
        self.call(Method::GET, &format!("/api/audit?since={since}"), None).await
    }

    /// Creates the station unless one with its id exists.
    pub async fn ensure_station(&self, spec: &StationSpec) -> Result<(), ClientError> {
        let path = format!("/api/workstations/{}", encode(&spec.id));
        match self.call::<Versioned<Workstation>>(Method::GET, &path, None).await {
            Ok(_) => Ok(()),
            Err(e) if e.status() == Some(404) => {
                self.call::<Value>(Method::POST, "/api/workstations", Self::json(&spec.to_request())).await?;
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    /// Creates the routing unless one with its id exists.
    pub async fn ensure_routing(&self, spec: &RoutingSpec) -> Result<(), ClientError> {
        let path = format!("/api/routings/{}", encode(&spec.id));
        match self.call::<Versioned<Routing>>(Method::GET, &path, None).await {
            Ok(_) => Ok(()),
            Err(e) if e.status() == Some(404) => {
                self.call::<Value>(Method::POST, "/api/routings", Self::json(&spec.to_request())).await?;
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    /// The id of the worker with this name, registering it if needed.
    pub async fn ensure_worker(&self, spec: &WorkerSpec) -> Result<String, ClientError> {
        if let Some(w) = self.workers().await?.into_iter().find(|w| w.value.name == spec.name) {
            return Ok(w.value.id);
        }
        let created: Versioned<Worker> = self.call(Method::POST, "/api/workers", Self::json(&spec.to_request())).await?;
        Ok(created.value.id)
    }
}

/// Percent-encodes everything outside the URL-safe id alphabet.
fn encode(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}
