//! Scene generation service.
//!
//! Training submits `(scene, description)` jobs over HTTP and polls for the
//! regenerated scene later; generation runs on a fixed pool of worker threads
//! behind a bounded FIFO queue. [`client::Client`] is the blocking client used
//! by the trainer.

pub mod backend;
pub mod client;
pub mod config;
mod http;
mod jobs;

use std::net::{SocketAddr, ToSocketAddrs};
use std::sync::Arc;
use std::thread::JoinHandle;

use thiserror::Error;
use tokio::net::TcpSocket;

pub use backend::{Backend, JobInput, LatencyBackend, MutatorBackend};
pub use config::ServerConfig;
pub use jobs::JobState;
use syngrpo_core::env::EnvConfig;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("invalid server config: {0}")]
    Config(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A running server. Dropping the handle shuts it down.
pub struct ServerHandle {
    addr: SocketAddr,
    table: Arc<jobs::JobTable>,
    workers: Vec<JoinHandle<()>>,
    http: Option<(tokio::sync::oneshot::Sender<()>, JoinHandle<()>)>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Lifecycle of a job as the table currently records it.
    pub fn job_state(&self, job_id: &str) -> Option<JobState> {
        self.table.state(job_id)
    }

    /// Queue wait and run time of a finished job.
    pub fn job_timing(&self, job_id: &str) -> Option<(std::time::Duration, std::time::Duration)> {
        self.table.timing(job_id)
    }

    /// Stops accepting requests, lets workers finish their current job and
    /// joins every thread. Queued jobs are dropped.
    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Blocks until the HTTP side stops (it only stops through `shutdown`).
    pub fn wait(mut self) {
        if let Some((_tx, t)) = self.http.take() {
            let _ = t.join();
        }
        self.stop();
    }

    fn stop(&mut self) {
        if let Some((tx, t)) = self.http.take() {
            let _ = tx.send(());
            let _ = t.join();
        }
        self.table.close();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Starts a server with the scene mutator backend wrapped in the configured
/// artificial latency.
pub fn start(cfg: &ServerConfig, env: EnvConfig) -> Result<ServerHandle, ServerError> {
    let backend = LatencyBackend::new(MutatorBackend::new(env), cfg.latency_ms, cfg.latency_jitter_ms);
    start_with_backend(cfg, Arc::new(backend))
}

const LISTEN_BACKLOG: u32 = 1024;

fn listen(bind: &str) -> std::io::Result<tokio::net::TcpListener> {
    let mut last = None;
    for addr in bind.to_socket_addrs()? {
        let socket = if addr.is_ipv4() { TcpSocket::new_v4()? } else { TcpSocket::new_v6()? };
        // what std does too, so a restarted server can rebind over TIME_WAIT
        socket.set_reuseaddr(true)?;
        match socket.bind(addr).and_then(|()| socket.listen(LISTEN_BACKLOG)) {
            Ok(l) => return Ok(l),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "address resolved to nothing")))
}

pub fn start_with_backend(cfg: &ServerConfig, backend: Arc<dyn Backend>) -> Result<ServerHandle, ServerError> {
    cfg.validate().map_err(ServerError::Config)?;
    let bind = format!("{}:{}", cfg.bind, cfg.port);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    // std's listener backlog (128) overflows under a burst of clients and the
    // dropped SYNs cost a full second of retransmit.
    let listener = {
        let _ctx = rt.enter();
        listen(&bind).map_err(|source| ServerError::Bind { addr: bind.clone(), source })?
    };
    let addr = listener.local_addr()?;

    let table = Arc::new(jobs::JobTable::new(cfg.queue_depth, cfg.retention));
    let workers = (0..cfg.workers)
        .map(|i| {
            let table = Arc::clone(&table);
            let backend = Arc::clone(&backend);
            std::thread::Builder::new()
                .name(format!("gen-worker-{i}"))
                .spawn(move || jobs::worker_loop(&table, backend.as_ref()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let (tx, rx) = tokio::sync::oneshot::channel();
    let router = http::router(Arc::clone(&table));
    let http = std::thread::Builder::new().name("gen-http".into()).spawn(move || {
        rt.block_on(async move {
            let shutdown = async {
                let _ = rx.await;
            };
            if let Err(e) = axum::serve(listener, router).with_graceful_shutdown(shutdown).await {
                log::error!("http server stopped: {e}");
            }
        });
    })?;
    log::info!("generation server on {addr} with {} workers, queue {}", cfg.workers, cfg.queue_depth);
    Ok(ServerHandle { addr, table, workers, http: Some((tx, http)) })
}
