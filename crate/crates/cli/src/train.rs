use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;

use syngrpo_trainer::replace::InlineService;
use syngrpo_trainer::{run_training, Mode, RunOptions, TrainConfig, TrainError};

use crate::CliError;

#[derive(Args)]
pub struct TrainArgs {
    /// TOML training config; flags and --set override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory to create (or continue with --resume).
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Base URL of the generation server (syn mode).
    #[arg(long)]
    server_url: Option<String>,
    /// Train without replacements if the server cannot be reached.
    #[arg(long)]
    allow_degraded: bool,
    /// Generate replacements in-process instead of through a server.
    #[arg(long, conflicts_with = "server_url")]
    inline: bool,
    /// Wait for every replacement job before the next step.
    #[arg(long)]
    sync: bool,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Re-apply the replacements recorded in this ledger.jsonl.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Any config field as KEY=VALUE (TOML value syntax; dotted keys reach into `env`).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| usage(format!("empty key in --set {key}")))?;
    let mut t = table;
    for p in parts {
        t = t
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| usage(format!("--set {key}: {p} is not a table")))?;
    }
    t.insert(last.into(), value);
    Ok(())
}

pub fn build_config(a: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut table = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    let mut put = |k: &str, v: toml::Value| set_path(&mut table, k, v);
    if let Some(m) = a.mode {
        put("mode", toml::Value::String(m.to_string()))?;
    }
    if let Some(s) = a.seed {
        put("seed", toml::Value::Integer(i64::try_from(s).map_err(usage)?))?;
    }
    if let Some(u) = &a.server_url {
        put("server_url", toml::Value::String(u.clone()))?;
    }
    if a.allow_degraded {
        put("allow_degraded", toml::Value::Boolean(true))?;
    }
    if a.sync {
        put("sync_replacements", toml::Value::Boolean(true))?;
    }
    for (k, v) in [
        ("epochs", a.epochs),
        ("batch_size", a.batch_size),
        ("group_size", a.group_size),
        ("pool_size", a.pool_size),
        ("eval_every", a.eval_every),
        ("checkpoint_every", a.checkpoint_every),
    ] {
        if let Some(v) = v {
            put(k, toml::Value::Integer(v as i64))?;
        }
    }
    if let Some(lr) = a.lr {
        put("lr", toml::Value::Float(lr))?;
    }
    if let Some(m) = &a.manifest {
        put("manifest", toml::Value::String(m.display().to_string()))?;
    }
    for kv in &a.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        put(k.trim(), parse_value(v.trim()))?;
    }
    let cfg: TrainConfig = toml::Value::Table(table).try_into().map_err(usage)?;
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

pub fn run(a: TrainArgs) -> Result<(), CliError> {
    let cfg = build_config(&a)?;
    if a.inline && cfg.mode == Mode::Grpo {
        log::warn!("--inline has no effect in grpo mode");
    }
    let opts = RunOptions {
        run_dir: a.run_dir.clone(),
        resume: a.resume.clone(),
        replay: a.replay.clone(),
        service: a.inline.then(|| Arc::new(InlineService::new(cfg.env.clone())) as _),
    };
    let s = run_training(&cfg, &opts).map_err(|e| match e {
        TrainError::Config(_) => CliError::Usage(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    })?;
    let out = serde_json::json!({
        "run_dir": a.run_dir,
        "steps": s.steps,
        "final_checkpoint": s.final_checkpoint,
        "eval_accuracy": s.eval.accuracy,
        "eval_reward": s.eval.mean_reward,
        "hard_eval_accuracy": s.hard_eval.accuracy,
        "replacements_submitted": s.counters.submitted,
        "replacements_rejected": s.counters.rejected,
        "wall_s": s.wall.as_secs_f64(),
    });
    println!("{out}");
    Ok(())
}
