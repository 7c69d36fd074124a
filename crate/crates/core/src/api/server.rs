use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::{router, run_timers};
use crate::clock::ManualClock;
use crate::config::ServerConfig;
use crate::fleet::{Fleet, FleetClock, FleetError};

/// Opens the fleet a config describes: durable when it names a data dir,
/// on a manual clock when `sim_clock` is set.
pub fn open_fleet(config: &ServerConfig) -> Result<Fleet, FleetError> {
    let clock = if config.sim_clock {
        FleetClock::Manual(Arc::new(ManualClock::at_epoch()))
    } else {
        FleetClock::System
    };
    match &config.data_dir {
        Some(dir) => Fleet::open(dir, clock, config.scheduler),
        None => Ok(Fleet::in_memory(clock, config.scheduler)),
    }
}

/// A running HTTP server plus, on the wall clock, its timer task.
pub struct Server {
    addr: SocketAddr,
    fleet: Arc<Fleet>,
    stop: oneshot::Sender<()>,
    serve: JoinHandle<io::Result<()>>,
    timers: Option<JoinHandle<()>>,
}

impl Server {
    /// Binds `config.listen_address` and starts serving.
    pub async fn start(fleet: Arc<Fleet>, config: &ServerConfig) -> io::Result<Self> {
        let addr = config.listen_addr().map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
        let listener = TcpListener::bind(addr).await?;
        Self::with_listener(fleet, listener, config)
    }

    pub fn with_listener(fleet: Arc<Fleet>, listener: TcpListener, config: &ServerConfig) -> io::Result<Self> {
        let addr = listener.local_addr()?;
        let app = router(fleet.clone(), config.org_id.clone());
        let (stop, stopped) = oneshot::channel::<()>();
        let serve = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = stopped.await;
                })
                .await
        });
        let timers = fleet.manual_clock().is_none().then(|| {
            let fleet = fleet.clone();
            let period = Duration::from_millis(config.timer_interval_ms.max(10));
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(period);
                tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
                loop {
                    tick.tick().await;
                    if let Err(e) = run_timers(&fleet, fleet.now()) {
                        tracing::warn!(error = %e, "timer pass failed");
                    }
                }
            })
        });
        tracing::info!(%addr, "listening");
        Ok(Self { addr, fleet, stop, serve, timers })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn fleet(&self) -> &Arc<Fleet> {
        &self.fleet
    }

    /// Stops accepting, gives open requests a moment to finish, then drops
    /// whatever is left (event streams never finish on their own).
    pub async fn shutdown(self) {
        if let Some(t) = &self.timers {
            t.abort();
        }
        let _ = self.stop.send(());
        let mut serve = self.serve;
        if tokio::time::timeout(Duration::from_secs(2), &mut serve).await.is_err() {
            serve.abort();
        }
    }
}
