//! Scheduling replacement jobs and swapping finished scenes into the pool.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use parking_lot::Mutex;

use syngrpo_core::env::{mutate_scene, EnvConfig, MutationDirective, Scene};
use syngrpo_core::protocol::{GenerateRequest, JobStatus};
use syngrpo_server::client::{Client, ClientError, Submitted};

use crate::ledger::{Pending, ReplacementEvent, ReplacementLedger};
use crate::seeds::{derive, Stream};

/// Description chosen for one sample of the batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub sample_id: usize,
    pub tokens: Vec<u32>,
}

/// Anything that accepts generation jobs and reports on them.
pub trait GenerationService: Send + Sync {
    fn submit(&self, req: &GenerateRequest) -> Result<Submitted, ClientError>;
    fn poll(&self, job_id: &str) -> Result<JobStatus, ClientError>;
}

impl GenerationService for Client {
    fn submit(&self, req: &GenerateRequest) -> Result<Submitted, ClientError> {
        Client::submit(self, req)
    }
    fn poll(&self, job_id: &str) -> Result<JobStatus, ClientError> {
        Client::poll(self, job_id)
    }
}

/// Runs the scene mutator in the caller's thread; every job completes at
/// submission.
pub struct InlineService {
    env: EnvConfig,
    results: Mutex<HashMap<String, JobStatus>>,
}

impl InlineService {
    pub fn new(env: EnvConfig) -> Self {
        InlineService { env, results: Mutex::new(HashMap::new()) }
    }
}

impl GenerationService for InlineService {
    fn submit(&self, req: &GenerateRequest) -> Result<Submitted, ClientError> {
        let d = MutationDirective::decode(&req.description_tokens, self.env.bucket_counts.len());
        let status = match mutate_scene(&req.scene, &d, req.seed, &self.env) {
            Ok(scene) => JobStatus::Completed { scene },
            Err(e) => JobStatus::Failed { reason: e.to_string() },
        };
        let mut results = self.results.lock();
        let id = format!("inline-{}", results.len());
        results.insert(id.clone(), status);
        Ok(Submitted::Accepted(id))
    }

    fn poll(&self, job_id: &str) -> Result<JobStatus, ClientError> {
        Ok(self.results.lock().remove(job_id).unwrap_or(JobStatus::Unknown))
    }
}

pub fn job_request(root_seed: u64, step: u64, scene: &Scene, sel: &Selection) -> GenerateRequest {
    GenerateRequest {
        sample_id: sel.sample_id as u64,
        scene: scene.clone(),
        description_tokens: sel.tokens.clone(),
        seed: derive(root_seed, Stream::Job, step, sel.sample_id as u64),
    }
}

/// Outcome counts of one scheduling round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScheduleReport {
    pub submitted: usize,
    pub skipped_pending: usize,
    pub rejected: usize,
    pub unreachable: usize,
}

fn record_submit(ledger: &mut ReplacementLedger, sample_id: usize, r: Result<Submitted, ClientError>) -> SubmitKind {
    match r {
        Ok(Submitted::Accepted(id)) => {
            ledger.set(sample_id, Pending::Job(id));
            ledger.counters.submitted += 1;
            SubmitKind::Accepted
        }
        Ok(Submitted::Overloaded) => {
            ledger.clear(sample_id);
            ledger.counters.rejected += 1;
            SubmitKind::Rejected
        }
        Err(ClientError::Transport(e)) => {
            log::warn!("submit for sample {sample_id} failed: {e}");
            ledger.clear(sample_id);
            ledger.counters.unreachable += 1;
            SubmitKind::Unreachable
        }
        Err(e) => {
            log::warn!("submit for sample {sample_id} refused: {e}");
            ledger.clear(sample_id);
            ledger.counters.failed += 1;
            SubmitKind::Rejected
        }
    }
}

enum SubmitKind {
    Accepted,
    Rejected,
    Unreachable,
}

/// Submits one job per selected sample that has nothing in flight, waiting
/// for each acknowledgement. Overloaded replies and unreachable servers leave
/// the sample as it is.
pub fn schedule_replacements(
    selections: &[Selection],
    pool: &[Scene],
    ledger: &mut ReplacementLedger,
    service: &dyn GenerationService,
    root_seed: u64,
    step: u64,
) -> ScheduleReport {
    let mut report = ScheduleReport::default();
    for sel in selections {
        if !ledger.begin(sel.sample_id) {
            report.skipped_pending += 1;
            continue;
        }
        let req = job_request(root_seed, step, &pool[sel.sample_id], sel);
        match record_submit(ledger, sel.sample_id, service.submit(&req)) {
            SubmitKind::Accepted => report.submitted += 1,
            SubmitKind::Rejected => report.rejected += 1,
            SubmitKind::Unreachable => report.unreachable += 1,
        }
    }
    report
}

fn record_poll(ledger: &mut ReplacementLedger, sample_id: usize, job: &str, r: Result<JobStatus, ClientError>) {
    // the slot may have been cleared or replaced while the poll was in flight
    if ledger.pending(sample_id) != Some(&Pending::Job(job.to_string())) {
        return;
    }
    match r {
        Ok(JobStatus::Pending) => {}
        Ok(JobStatus::Completed { scene }) => ledger.set(sample_id, Pending::Ready(scene)),
        Ok(JobStatus::Failed { reason }) => {
            log::warn!("job {job} for sample {sample_id} failed: {reason}");
            ledger.clear(sample_id);
            ledger.counters.failed += 1;
        }
        Ok(JobStatus::Unknown) => {
            ledger.clear(sample_id);
            ledger.counters.failed += 1;
        }
        Err(e) => {
            log::warn!("poll of job {job} failed: {e}");
            ledger.counters.unreachable += 1;
        }
    }
}

/// Polls every acknowledged job once.
pub fn poll_jobs(ledger: &mut ReplacementLedger, service: &dyn GenerationService) {
    for (sample_id, job) in ledger.jobs() {
        let r = service.poll(&job);
        record_poll(ledger, sample_id, &job, r);
    }
}

/// Swaps every finished result into the pool and returns the events, in
/// sample order. A result that does not descend from the sample's live scene
/// or changes its foreground is discarded.
pub fn apply_ready(pool: &mut [Scene], ledger: &mut ReplacementLedger, step: u64) -> Vec<ReplacementEvent> {
    let mut events = Vec::new();
    for (sample_id, scene) in ledger.take_ready() {
        let old = &pool[sample_id];
        if scene.generation.parent.as_deref() != Some(old.id.as_str()) || !old.same_foreground(&scene) {
            log::warn!("discarding result for sample {sample_id}: not a foreground-preserving child of {}", old.id);
            ledger.counters.discarded += 1;
            continue;
        }
        let ev = ReplacementEvent {
            step,
            sample_id,
            old_scene_id: old.id.clone(),
            new_scene_id: scene.id.clone(),
            scene: scene.clone(),
        };
        pool[sample_id] = scene;
        ledger.record(ev.clone());
        events.push(ev);
    }
    events
}

/// Polls outstanding jobs, then swaps in whatever has finished.
pub fn apply_replacements(
    pool: &mut [Scene],
    ledger: &mut ReplacementLedger,
    service: &dyn GenerationService,
    step: u64,
) -> Vec<ReplacementEvent> {
    poll_jobs(ledger, service);
    apply_ready(pool, ledger, step)
}

/// Background thread that submits queued requests and polls acknowledged
/// jobs, so the training step never waits on the network. The ledger is the
/// only state it shares with the step loop.
pub struct Courier {
    tx: Option<Sender<(usize, GenerateRequest)>>,
    thread: Option<JoinHandle<()>>,
    ledger: Arc<Mutex<ReplacementLedger>>,
}

impl Courier {
    pub fn start(
        service: Arc<dyn GenerationService>,
        ledger: Arc<Mutex<ReplacementLedger>>,
        poll_interval: Duration,
    ) -> std::io::Result<Self> {
        let (tx, rx) = crossbeam_channel::unbounded();
        let shared = Arc::clone(&ledger);
        let thread = std::thread::Builder::new()
            .name("courier".into())
            .spawn(move || courier_loop(service.as_ref(), &shared, &rx, poll_interval))?;
        Ok(Courier { tx: Some(tx), thread: Some(thread), ledger })
    }

    /// Claims the in-flight slot of each selected sample and queues its job.
    pub fn schedule(&self, selections: &[Selection], pool: &[Scene], root_seed: u64, step: u64) -> ScheduleReport {
        let mut report = ScheduleReport::default();
        let mut ledger = self.ledger.lock();
        for sel in selections {
            if !ledger.begin(sel.sample_id) {
                report.skipped_pending += 1;
                continue;
            }
            let req = job_request(root_seed, step, &pool[sel.sample_id], sel);
            if self.tx.as_ref().is_some_and(|tx| tx.send((sel.sample_id, req)).is_ok()) {
                report.submitted += 1;
            } else {
                ledger.clear(sel.sample_id);
            }
        }
        report
    }

    pub fn ledger(&self) -> &Arc<Mutex<ReplacementLedger>> {
        &self.ledger
    }
}

impl Drop for Courier {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

// The server runs jobs in arrival order, so once the oldest outstanding job
// is still pending the younger ones almost certainly are too. Polling stops
// there; each job costs about one poll instead of one per tick.
fn courier_loop(
    service: &dyn GenerationService,
    ledger: &Mutex<ReplacementLedger>,
    rx: &Receiver<(usize, GenerateRequest)>,
    poll_interval: Duration,
) {
    let mut outstanding: VecDeque<(usize, String)> = VecDeque::new();
    let mut next_poll = Instant::now() + poll_interval;
    loop {
        let wait = next_poll.saturating_duration_since(Instant::now());
        let mut batch = Vec::new();
        match rx.recv_timeout(wait) {
            Ok(item) => batch.push(item),
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return,
        }
        batch.extend(rx.try_iter());
        for (sample_id, req) in batch {
            let r = service.submit(&req);
            let mut l = ledger.lock();
            if l.pending(sample_id) == Some(&Pending::Submitting) {
                if let SubmitKind::Accepted = record_submit(&mut l, sample_id, r) {
                    if let Some(Pending::Job(id)) = l.pending(sample_id) {
                        outstanding.push_back((sample_id, id.clone()));
                    }
                }
            }
        }
        if Instant::now() < next_poll {
            continue;
        }
        while let Some((sample_id, job)) = outstanding.front().cloned() {
            let r = service.poll(&job);
            let still_waiting = matches!(r, Ok(JobStatus::Pending) | Err(_));
            let mut l = ledger.lock();
            record_poll(&mut l, sample_id, &job, r);
            if still_waiting && l.pending(sample_id) == Some(&Pending::Job(job.clone())) {
                break;
            }
            outstanding.pop_front();
        }
        next_poll = Instant::now() + poll_interval;
    }
}
