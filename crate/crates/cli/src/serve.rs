use std::io::Write;
use std::path::PathBuf;

use clap::Args;

use syngrpo_core::env::EnvConfig;
use syngrpo_server::config::ServerConfig;

use crate::CliError;

#[derive(Args)]
pub struct ServeArgs {
    /// TOML file with server settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// TOML file with scene settings (the `env` table of a training config also works).
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long)]
    bind: Option<String>,
    /// 0 picks a free port.
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    queue_depth: Option<usize>,
    /// Fixed generation latency per job.
    #[arg(long)]
    latency_ms: Option<u64>,
    /// Extra uniform latency per job, up to this many milliseconds.
    #[arg(long)]
    latency_jitter_ms: Option<u64>,
    /// Finished jobs kept for polling.
    #[arg(long)]
    retention: Option<usize>,
}

fn read(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn load_env(path: Option<&PathBuf>) -> Result<EnvConfig, CliError> {
    let Some(path) = path else { return Ok(EnvConfig::default()) };
    let text = read(path)?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let value = match table.get("env") {
        Some(v) => v.clone(),
        None => toml::Value::Table(table),
    };
    let env: EnvConfig = value.try_into().map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    env.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(env)
}

pub fn run(a: ServeArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => toml::from_str::<ServerConfig>(&read(p)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => ServerConfig::default(),
    };
    if let Some(v) = a.bind {
        cfg.bind = v;
    }
    if let Some(v) = a.port {
        cfg.port = v;
    }
    if let Some(v) = a.workers {
        cfg.workers = v;
    }
    if let Some(v) = a.queue_depth {
        cfg.queue_depth = v;
    }
    if let Some(v) = a.latency_ms {
        cfg.latency_ms = v;
    }
    if let Some(v) = a.latency_jitter_ms {
        cfg.latency_jitter_ms = v;
    }
    if let Some(v) = a.retention {
        cfg.retention = v;
    }
    cfg.validate().map_err(CliError::Usage)?;
    let env = load_env(a.env.as_ref())?;
    let handle = syngrpo_server::start(&cfg, env).map_err(|e| match e {
        syngrpo_server::ServerError::Config(m) => CliError::Usage(m),
        syngrpo_server::ServerError::Bind { .. } => CliError::Usage(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    })?;
    println!("listening on {}", handle.url());
    let _ = std::io::stdout().flush();
    handle.wait();
    Ok(())
}
