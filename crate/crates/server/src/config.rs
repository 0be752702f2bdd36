use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub workers: usize,
    /// Jobs waiting for a worker; submissions beyond this are rejected.
    pub queue_depth: usize,
    /// Fixed artificial generation latency.
    pub latency_ms: u64,
    /// Extra latency drawn uniformly from `[0, latency_jitter_ms]` per job.
    pub latency_jitter_ms: u64,
    pub bind: String,
    /// 0 picks a free port.
    pub port: u16,
    /// Finished jobs kept for polling; older ones are evicted.
    pub retention: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            workers: 4,
            queue_depth: 256,
            latency_ms: 0,
            latency_jitter_ms: 0,
            bind: "127.0.0.1".into(),
            port: 8731,
            retention: 200,
        }
    }
}

impl ServerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.workers == 0 {
            return Err("workers must be at least 1".into());
        }
        if self.queue_depth < self.workers {
            return Err(format!("queue_depth {} is below workers {}", self.queue_depth, self.workers));
        }
        if self.retention == 0 {
            return Err("retention must be at least 1".into());
        }
        Ok(())
    }
}
