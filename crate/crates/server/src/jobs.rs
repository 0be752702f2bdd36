//! Job table, FIFO queue and the worker loop.

use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

use crate::backend::{Backend, JobInput};
use syngrpo_core::env::Scene;
use syngrpo_core::protocol::{Health, JobStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobState {
    Queued,
    Running,
    Completed,
    Failed,
}

struct Job {
    input: Option<JobInput>,
    state: JobState,
    result: Option<Scene>,
    reason: Option<String>,
    enqueued: Instant,
    started: Option<Instant>,
    finished: Option<Instant>,
}

#[derive(Default)]
struct Inner {
    jobs: HashMap<String, Job>,
    queue: VecDeque<String>,
    finished: VecDeque<String>,
    completed: u64,
    failed: u64,
    closed: bool,
}

pub(crate) struct JobTable {
    inner: Mutex<Inner>,
    ready: Condvar,
    capacity: usize,
    retention: usize,
    born: Instant,
}

pub(crate) enum Submit {
    Accepted(String),
    Overloaded,
}

impl JobTable {
    pub fn new(capacity: usize, retention: usize) -> Self {
        JobTable { inner: Mutex::new(Inner::default()), ready: Condvar::new(), capacity, retention, born: Instant::now() }
    }

    pub fn submit(&self, input: JobInput) -> Submit {
        let mut g = self.inner.lock();
        if g.queue.len() >= self.capacity || g.closed {
            return Submit::Overloaded;
        }
        let id = uuid::Uuid::new_v4().to_string();
        g.jobs.insert(
            id.clone(),
            Job {
                input: Some(input),
                state: JobState::Queued,
                result: None,
                reason: None,
                enqueued: Instant::now(),
                started: None,
                finished: None,
            },
        );
        g.queue.push_back(id.clone());
        drop(g);
        self.ready.notify_one();
        Submit::Accepted(id)
    }

    pub fn status(&self, id: &str) -> JobStatus {
        let g = self.inner.lock();
        match g.jobs.get(id) {
            None => JobStatus::Unknown,
            Some(job) => match job.state {
                JobState::Queued | JobState::Running => JobStatus::Pending,
                JobState::Completed => JobStatus::Completed { scene: job.result.clone().expect("completed job has a result") },
                JobState::Failed => JobStatus::Failed { reason: job.reason.clone().unwrap_or_default() },
            },
        }
    }

    /// Time spent queued and time spent running, once the job has finished.
    pub fn timing(&self, id: &str) -> Option<(Duration, Duration)> {
        let g = self.inner.lock();
        let job = g.jobs.get(id)?;
        let (started, finished) = (job.started?, job.finished?);
        Some((started - job.enqueued, finished - started))
    }

    pub fn state(&self, id: &str) -> Option<JobState> {
        self.inner.lock().jobs.get(id).map(|j| j.state)
    }

    pub fn health(&self) -> Health {
        let g = self.inner.lock();
        Health {
            uptime_ms: self.born.elapsed().as_millis() as u64,
            queue_depth: g.queue.len(),
            completed: g.completed,
            failed: g.failed,
        }
    }

    pub fn close(&self) {
        self.inner.lock().closed = true;
        self.ready.notify_all();
    }

    fn next(&self) -> Option<(String, JobInput)> {
        let mut g = self.inner.lock();
        loop {
            if g.closed {
                return None;
            }
            if let Some(id) = g.queue.pop_front() {
                let job = g.jobs.get_mut(&id).expect("queued job is in the table");
                job.state = JobState::Running;
                job.started = Some(Instant::now());
                let input = job.input.take().expect("queued job keeps its input");
                return Some((id, input));
            }
            self.ready.wait(&mut g);
        }
    }

    fn finish(&self, id: String, outcome: Result<Scene, String>) {
        let mut g = self.inner.lock();
        let job = g.jobs.get_mut(&id).expect("running job is in the table");
        job.finished = Some(Instant::now());
        match outcome {
            Ok(scene) => {
                job.state = JobState::Completed;
                job.result = Some(scene);
                g.completed += 1;
            }
            Err(reason) => {
                job.state = JobState::Failed;
                job.reason = Some(reason);
                g.failed += 1;
            }
        }
        g.finished.push_back(id);
        while g.finished.len() > self.retention {
            if let Some(old) = g.finished.pop_front() {
                g.jobs.remove(&old);
            }
        }
    }
}

fn panic_reason(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        format!("backend panicked: {s}")
    } else if let Some(s) = payload.downcast_ref::<String>() {
        format!("backend panicked: {s}")
    } else {
        "backend panicked".into()
    }
}

pub(crate) fn worker_loop(table: &JobTable, backend: &dyn Backend) {
    while let Some((id, input)) = table.next() {
        let outcome = match catch_unwind(AssertUnwindSafe(|| backend.generate(&input))) {
            Ok(r) => r,
            Err(payload) => Err(panic_reason(payload)),
        };
        if let Err(reason) = &outcome {
            log::warn!("job {id} (sample {}) failed: {reason}", input.sample_id);
        }
        table.finish(id, outcome);
    }
}
