//! Whole training runs: data, replacement plumbing, checkpoints and logs.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use syngrpo_core::checkpoint::{Checkpoint, TrainingState};
use syngrpo_core::CoreError;
use syngrpo_core::env::dataset::{sample_split, DatasetManifest, Split};
use syngrpo_core::env::{difficulty_score, Scene};
use syngrpo_server::client::Client;

use crate::config::{Mode, TrainConfig};
use crate::evaluate::{evaluate, EvalReport};
use crate::ledger::{read_events, write_event, Counters, ReplacementEvent, ReplacementLedger};
use crate::metrics::{read_records, write_record, MetricsRecord};
use crate::replace::{apply_ready, apply_replacements, poll_jobs, schedule_replacements, Courier, GenerationService, Selection};
use crate::seeds::{derive, Stream};
use crate::step::{initial_state, process_batch};
use crate::TrainError;

pub const CONFIG_SNAPSHOT: &str = "config.snapshot";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const EVENTS_FILE: &str = "events.log";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Default, Clone)]
pub struct RunOptions {
    pub run_dir: PathBuf,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
    /// Ledger of an earlier run whose replacements are re-applied verbatim.
    pub replay: Option<PathBuf>,
    /// Generation service to use instead of connecting to `server_url`.
    pub service: Option<Arc<dyn GenerationService>>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: u64,
    pub final_checkpoint: PathBuf,
    /// Every record in `metrics.jsonl`, including those before a resume.
    pub records: Vec<MetricsRecord>,
    pub eval: EvalReport,
    pub hard_eval: EvalReport,
    pub counters: Counters,
    /// Scenes the run started from, for auditing the ledger.
    pub initial_pool: Vec<Scene>,
    pub wall: Duration,
}

/// Pool and ledger state stored next to each checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    step: u64,
    pool: Vec<Scene>,
    ledger: ReplacementLedger,
}

pub fn checkpoint_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("step-{step:06}.ckpt"))
}

fn sidecar_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("sidecar.json")
}

struct Data {
    train: Vec<Scene>,
    eval: Vec<Scene>,
    hard: Vec<Scene>,
}

fn load_data(cfg: &TrainConfig) -> Result<Data, TrainError> {
    match &cfg.manifest {
        Some(path) => {
            let m = DatasetManifest::load(path)?;
            if m.env != cfg.env {
                return Err(TrainError::Config("manifest env differs from the training env".into()));
            }
            let base = path.parent().unwrap_or(Path::new("."));
            let data = Data { train: m.scenes(base, Split::Train)?, eval: m.scenes(base, Split::Eval)?, hard: m.scenes(base, Split::Hard)? };
            if data.train.len() < cfg.batch_size {
                return Err(TrainError::Config("manifest has fewer training scenes than one batch".into()));
            }
            Ok(data)
        }
        None => Ok(Data {
            train: sample_split(&cfg.env, Split::Train, cfg.seed, cfg.pool_size)?,
            eval: sample_split(&cfg.env, Split::Eval, cfg.seed, cfg.eval_size)?,
            hard: sample_split(&cfg.env, Split::Hard, cfg.seed, cfg.hard_eval_size)?,
        }),
    }
}

/// Sample ids of the batch at `step`: each epoch walks its own permutation.
pub fn batch_indices(cfg: &TrainConfig, pool: usize, step: u64) -> Vec<usize> {
    let spe = cfg.steps_per_epoch(pool) as u64;
    let (epoch, pos) = (step / spe, (step % spe) as usize);
    let mut perm: Vec<usize> = (0..pool).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(cfg.seed, Stream::Shuffle, epoch, 0)));
    perm[pos * cfg.batch_size..(pos + 1) * cfg.batch_size].to_vec()
}

enum Replacer {
    Off,
    Replay(BTreeMap<u64, Vec<ReplacementEvent>>),
    Sync { service: Arc<dyn GenerationService>, ledger: ReplacementLedger },
    Async(Courier),
}

fn connect(cfg: &TrainConfig, opts: &RunOptions, ledger: ReplacementLedger) -> Result<Replacer, TrainError> {
    if cfg.mode == Mode::Grpo {
        return Ok(Replacer::Off);
    }
    if let Some(path) = &opts.replay {
        let mut by_step: BTreeMap<u64, Vec<ReplacementEvent>> = BTreeMap::new();
        for ev in read_events(BufReader::new(File::open(path)?))? {
            by_step.entry(ev.step).or_default().push(ev);
        }
        return Ok(Replacer::Replay(by_step));
    }
    let service: Arc<dyn GenerationService> = match (&opts.service, &cfg.server_url) {
        (Some(s), _) => Arc::clone(s),
        (None, Some(url)) => {
            let client = Client::new(url, Duration::from_millis(cfg.request_timeout_ms));
            match client.health() {
                Ok(_) => Arc::new(client),
                Err(e) if cfg.allow_degraded => {
                    log::warn!("server at {url} unavailable ({e}); training without replacements");
                    return Ok(Replacer::Off);
                }
                Err(e) => return Err(TrainError::Server(format!("{url}: {e}"))),
            }
        }
        (None, None) if cfg.allow_degraded => {
            log::warn!("no server configured; training without replacements");
            return Ok(Replacer::Off);
        }
        (None, None) => return Err(TrainError::Server("syn mode needs server_url (or allow_degraded)".into())),
    };
    if cfg.sync_replacements {
        Ok(Replacer::Sync { service, ledger })
    } else {
        let courier =
            Courier::start(service, Arc::new(Mutex::new(ledger)), Duration::from_millis(cfg.poll_interval_ms.max(1)))?;
        Ok(Replacer::Async(courier))
    }
}

impl Replacer {
    fn apply(&mut self, pool: &mut [Scene], step: u64) -> Result<Vec<ReplacementEvent>, TrainError> {
        match self {
            Replacer::Off => Ok(Vec::new()),
            Replacer::Replay(by_step) => {
                let events = by_step.remove(&step).unwrap_or_default();
                for ev in &events {
                    let live = pool
                        .get(ev.sample_id)
                        .ok_or_else(|| TrainError::Replay(format!("sample {} outside the pool", ev.sample_id)))?;
                    if live.id != ev.old_scene_id {
                        return Err(TrainError::Replay(format!(
                            "step {step}: sample {} holds {}, ledger expects {}",
                            ev.sample_id, live.id, ev.old_scene_id
                        )));
                    }
                    pool[ev.sample_id] = ev.scene.clone();
                }
                Ok(events)
            }
            Replacer::Sync { service, ledger } => Ok(apply_replacements(pool, ledger, service.as_ref(), step)),
            Replacer::Async(c) => Ok(apply_ready(pool, &mut c.ledger().lock(), step)),
        }
    }

    fn schedule(&mut self, selections: &[Selection], pool: &[Scene], cfg: &TrainConfig, step: u64) {
        match self {
            Replacer::Off | Replacer::Replay(_) => {}
            Replacer::Sync { service, ledger } => {
                schedule_replacements(selections, pool, ledger, service.as_ref(), cfg.seed, step);
                let t0 = Instant::now();
                let limit = Duration::from_millis(cfg.request_timeout_ms.max(1) * 10);
                while !ledger.jobs().is_empty() {
                    poll_jobs(ledger, service.as_ref());
                    if ledger.jobs().is_empty() || t0.elapsed() > limit {
                        break;
                    }
                    std::thread::sleep(Duration::from_millis(cfg.poll_interval_ms.max(1)));
                }
            }
            Replacer::Async(c) => {
                c.schedule(selections, pool, cfg.seed, step);
            }
        }
    }

    fn persistent_ledger(&self) -> ReplacementLedger {
        match self {
            Replacer::Sync { ledger, .. } => ledger.persistent(),
            Replacer::Async(c) => c.ledger().lock().persistent(),
            _ => ReplacementLedger::new(),
        }
    }

    /// Counters and number of pending jobs.
    fn status(&self) -> (Counters, usize) {
        match self {
            Replacer::Sync { ledger, .. } => (ledger.counters, ledger.pending_count()),
            Replacer::Async(c) => {
                let l = c.ledger().lock();
                (l.counters, l.pending_count())
            }
            _ => (Counters::default(), 0),
        }
    }
}

/// Keeps the lines of a JSONL file whose `step` is below `step`.
fn truncate_jsonl(path: &Path, step: u64) -> Result<(), TrainError> {
    if !path.exists() {
        return Ok(());
    }
    let mut kept = String::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        let v: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(_) => continue,
        };
        if v.get("step").and_then(|s| s.as_u64()).is_some_and(|s| s < step) {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    std::fs::write(path, kept)?;
    Ok(())
}

fn append(path: &Path) -> Result<BufWriter<File>, TrainError> {
    Ok(BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?))
}

fn mean_difficulty<'a>(scenes: impl IntoIterator<Item = &'a Scene>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for sc in scenes {
        s += difficulty_score(sc);
        n += 1;
    }
    s / n.max(1) as f64
}

fn save_checkpoint(
    run_dir: &Path,
    step: u64,
    state: &TrainingState,
    pool: &[Scene],
    ledger: ReplacementLedger,
) -> Result<PathBuf, TrainError> {
    let path = checkpoint_path(run_dir, step);
    Checkpoint::new(step, state.clone()).save(&path)?;
    let sidecar = Sidecar { step, pool: pool.to_vec(), ledger };
    std::fs::write(sidecar_path(&path), serde_json::to_string(&sidecar)?)?;
    Ok(path)
}

pub fn run_training(cfg: &TrainConfig, opts: &RunOptions) -> Result<RunSummary, TrainError> {
    cfg.validate()?;
    let started = Instant::now();
    let dir = &opts.run_dir;
    std::fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
    let data = load_data(cfg)?;
    let spe = cfg.steps_per_epoch(data.train.len());
    let total = (cfg.epochs * spe) as u64;

    let (mut state, mut pool, ledger, start) = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
            if side.step != ck.step || side.pool.len() != data.train.len() {
                return Err(TrainError::Resume("checkpoint sidecar does not match the checkpoint or pool".into()));
            }
            if ck.state.params.shape() != &cfg.env.policy_shape() {
                return Err(TrainError::Resume("checkpoint policy shape differs from the config".into()));
            }
            let mut ledger = side.ledger;
            ledger.forget_in_flight();
            for f in [METRICS_FILE, TIMING_FILE, LEDGER_FILE] {
                truncate_jsonl(&dir.join(f), ck.step)?;
            }
            (ck.state, side.pool, ledger, ck.step)
        }
        None => {
            for f in [METRICS_FILE, TIMING_FILE, LEDGER_FILE, EVENTS_FILE] {
                let _ = std::fs::remove_file(dir.join(f));
            }
            (initial_state(cfg)?, data.train.clone(), ReplacementLedger::new(), 0)
        }
    };
    std::fs::write(dir.join(CONFIG_SNAPSHOT), cfg.to_toml())?;

    let mut replacer = connect(cfg, opts, ledger)?;
    let mut metrics = append(&dir.join(METRICS_FILE))?;
    let mut timing = append(&dir.join(TIMING_FILE))?;
    let mut ledger_log = append(&dir.join(LEDGER_FILE))?;
    let mut events_log = append(&dir.join(EVENTS_FILE))?;
    writeln!(events_log, "start step={start} total={total} mode={} seed={}", cfg.mode, cfg.seed)?;

    let mut final_checkpoint = None;
    let mut last_counters = replacer.status().0;
    for step in start..total {
        let t0 = Instant::now();
        let events = replacer.apply(&mut pool, step)?;
        for ev in &events {
            write_event(ev, &mut ledger_log)?;
        }
        ledger_log.flush()?;

        let t_apply = t0.elapsed();
        let ids = batch_indices(cfg, pool.len(), step);
        let batch: Vec<(usize, &Scene)> = ids.iter().map(|&i| (i, &pool[i])).collect();
        let outcome = match process_batch(&mut state, &batch, cfg, step) {
            Ok(o) => o,
            Err(e @ (TrainError::NonFinite { .. } | TrainError::Core(CoreError::NonFinite(_)))) => {
                let (reason, groups) = match e {
                    TrainError::NonFinite { reason, groups, .. } => (reason, groups),
                    other => (other.to_string(), Vec::new()),
                };
                let diag = dir.join("diagnostics");
                std::fs::create_dir_all(&diag)?;
                let scenes: Vec<(usize, &str)> = batch.iter().map(|(i, s)| (*i, s.id.as_str())).collect();
                let dump = serde_json::json!({ "step": step, "reason": reason, "batch": scenes, "params": state.params, "groups": groups });
                let path = diag.join(format!("step-{step:06}.json"));
                std::fs::write(&path, serde_json::to_string_pretty(&dump)?)?;
                writeln!(events_log, "step {step}: aborted, non-finite update; dump in {}", path.display())?;
                return Err(TrainError::NonFinite { step, reason: format!("{reason}; dump at {}", path.display()), groups });
            }
            Err(e) => return Err(e),
        };

        let mut rec = MetricsRecord::new(step, (step / spe as u64) as usize + 1, &outcome.stats);
        rec.replacements = events.len();
        rec.batch_difficulty = mean_difficulty(batch.iter().map(|(_, s)| *s));
        rec.pool_difficulty = mean_difficulty(&pool);
        let last = step + 1 == total;
        if last || (cfg.eval_every > 0 && (step + 1) % cfg.eval_every as u64 == 0) {
            let e = evaluate(&state.params, &data.eval)?;
            rec.eval_accuracy = Some(e.accuracy);
            rec.eval_reward = Some(e.mean_reward);
            rec.hard_eval_accuracy = Some(evaluate(&state.params, &data.hard)?.accuracy);
        }

        let selections: Vec<Selection> = outcome
            .groups
            .iter()
            .filter_map(|g| g.selection.clone().map(|tokens| Selection { sample_id: g.sample_id, tokens }))
            .collect();
        let t_batch = t0.elapsed();
        replacer.schedule(&selections, &pool, cfg, step);
        let t_schedule = t0.elapsed();

        write_record(&rec, &mut metrics)?;
        metrics.flush()?;
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        let timing_line = serde_json::json!({
            "step": step,
            "wall_ms": ms(t0.elapsed()),
            "apply_ms": ms(t_apply),
            "batch_ms": ms(t_batch - t_apply),
            "schedule_ms": ms(t_schedule - t_batch),
        });
        writeln!(timing, "{timing_line}")?;

        let (c, pending) = replacer.status();
        if c != last_counters || !events.is_empty() {
            writeln!(
                events_log,
                "step {step}: replaced={} submitted={} rejected={} unreachable={} failed={} discarded={} pending={}",
                events.len(),
                c.submitted - last_counters.submitted,
                c.rejected - last_counters.rejected,
                c.unreachable - last_counters.unreachable,
                c.failed - last_counters.failed,
                c.discarded - last_counters.discarded,
                pending
            )?;
            last_counters = c;
        }
        if last || (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every as u64 == 0) {
            final_checkpoint = Some(save_checkpoint(dir, step + 1, &state, &pool, replacer.persistent_ledger())?);
        }
    }
    timing.flush()?;
    let counters = replacer.status().0;
    writeln!(
        events_log,
        "done: submitted={} rejected={} unreachable={} failed={} discarded={}",
        counters.submitted, counters.rejected, counters.unreachable, counters.failed, counters.discarded
    )?;
    events_log.flush()?;
    drop(replacer);

    let final_checkpoint = match final_checkpoint {
        Some(p) => p,
        // resumed from the final checkpoint: nothing left to run
        None => opts.resume.clone().ok_or_else(|| TrainError::Config("run has no steps".into()))?,
    };
    let (records, _) = read_records(BufReader::new(File::open(dir.join(METRICS_FILE))?))?;
    Ok(RunSummary {
        steps: total,
        final_checkpoint,
        records,
        eval: evaluate(&state.params, &data.eval)?,
        hard_eval: evaluate(&state.params, &data.hard)?,
        counters,
        initial_pool: data.train,
        wall: started.elapsed(),
    })
}
