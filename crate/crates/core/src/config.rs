use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheduler::SchedulerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path}:{line}:{column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("invalid listen address {0:?}")]
    ListenAddress(String),
    #[error("data dir {path} is not writable: {source}")]
    DataDir { path: PathBuf, source: std::io::Error },
    #[error("scheduler: {0}")]
    Scheduler(String),
    #[error("TLS termination is not built in; put the server behind a TLS-terminating reverse proxy")]
    TlsUnsupported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlsConfig {
    pub cert: PathBuf,
    pub key: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub listen_address: String,
    /// `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub scheduler: SchedulerConfig,
    pub org_id: String,
    pub tls: Option<TlsConfig>,
    /// Drive time through `POST /api/sim/clock` instead of the wall clock.
    pub sim_clock: bool,
    /// Wall-clock period of the processing and stale-job timers.
    pub timer_interval_ms: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen_address: "127.0.0.1:8080".into(),
            data_dir: None,
            scheduler: SchedulerConfig::default(),
            org_id: "default".into(),
            tls: None,
            sim_clock: false,
            timer_interval_ms: 250,
        }
    }
}

impl ServerConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.into(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn listen_addr(&self) -> Result<SocketAddr, ConfigError> {
        self.listen_address
            .to_socket_addrs()
            .ok()
            .and_then(|mut addrs| addrs.next())
            .ok_or_else(|| ConfigError::ListenAddress(self.listen_address.clone()))
    }

    /// Checks every field; creates the data dir if missing.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.listen_addr()?;
        self.scheduler.validate().map_err(ConfigError::Scheduler)?;
        if self.tls.is_some() {
            return Err(ConfigError::TlsUnsupported);
        }
        if let Some(dir) = &self.data_dir {
            let probe = dir.join(".write-probe");
            std::fs::create_dir_all(dir)
                .and_then(|_| std::fs::write(&probe, b""))
                .and_then(|_| std::fs::remove_file(&probe))
                .map_err(|source| ConfigError::DataDir { path: dir.clone(), source })?;
        }
        Ok(())
    }
}
