//! Per-sample replacement bookkeeping shared by the step loop and the
//! background courier.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use syngrpo_core::env::Scene;
use syngrpo_core::CoreError;

use crate::TrainError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Pending {
    /// Handed to the courier, not yet acknowledged by the server.
    Submitting,
    Job(String),
    /// Finished; swapped in at the next step boundary.
    Ready(Scene),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementEvent {
    pub step: u64,
    pub sample_id: usize,
    pub old_scene_id: String,
    pub new_scene_id: String,
    pub scene: Scene,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub submitted: u64,
    /// Overloaded replies; the sample keeps its scene.
    pub rejected: u64,
    /// Transport errors while submitting or polling.
    pub unreachable: u64,
    /// Jobs that failed, vanished from the server, or were refused as invalid.
    pub failed: u64,
    /// Results that did not descend from the sample's current scene.
    pub discarded: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplacementLedger {
    pending: BTreeMap<usize, Pending>,
    /// Generation depth of each sample's newest completed scene.
    latest_epoch: BTreeMap<usize, u32>,
    pub counters: Counters,
    /// Events recorded since the ledger was created or loaded.
    #[serde(skip)]
    events: Vec<ReplacementEvent>,
}

impl ReplacementLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pending(&self, sample_id: usize) -> Option<&Pending> {
        self.pending.get(&sample_id)
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    /// Claims the single in-flight slot for `sample_id`; false when taken.
    pub fn begin(&mut self, sample_id: usize) -> bool {
        if self.pending.contains_key(&sample_id) {
            return false;
        }
        self.pending.insert(sample_id, Pending::Submitting);
        true
    }

    pub fn set(&mut self, sample_id: usize, p: Pending) {
        self.pending.insert(sample_id, p);
    }

    pub fn clear(&mut self, sample_id: usize) {
        self.pending.remove(&sample_id);
    }

    /// `(sample, job id)` for every acknowledged job.
    pub fn jobs(&self) -> Vec<(usize, String)> {
        self.pending
            .iter()
            .filter_map(|(s, p)| match p {
                Pending::Job(id) => Some((*s, id.clone())),
                _ => None,
            })
            .collect()
    }

    /// Removes and returns every finished result, in sample order.
    pub fn take_ready(&mut self) -> Vec<(usize, Scene)> {
        let ready: Vec<usize> =
            self.pending.iter().filter(|(_, p)| matches!(p, Pending::Ready(_))).map(|(s, _)| *s).collect();
        ready
            .into_iter()
            .map(|s| match self.pending.remove(&s) {
                Some(Pending::Ready(scene)) => (s, scene),
                _ => unreachable!(),
            })
            .collect()
    }

    /// Drops in-flight jobs (a resumed run cannot poll them) but keeps
    /// finished results.
    pub fn forget_in_flight(&mut self) {
        self.pending.retain(|_, p| matches!(p, Pending::Ready(_)));
    }

    pub fn record(&mut self, event: ReplacementEvent) {
        self.latest_epoch.insert(event.sample_id, event.scene.generation.epoch);
        self.events.push(event);
    }

    pub fn latest_epoch(&self, sample_id: usize) -> Option<u32> {
        self.latest_epoch.get(&sample_id).copied()
    }

    pub fn events(&self) -> &[ReplacementEvent] {
        &self.events
    }

    /// Copy of the state a checkpoint needs, without the in-memory event log.
    pub fn persistent(&self) -> Self {
        ReplacementLedger {
            pending: self.pending.clone(),
            latest_epoch: self.latest_epoch.clone(),
            counters: self.counters,
            events: Vec::new(),
        }
    }
}

pub fn write_event(event: &ReplacementEvent, mut w: impl Write) -> Result<(), TrainError> {
    serde_json::to_writer(&mut w, event)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_events(reader: impl BufRead) -> Result<Vec<ReplacementEvent>, TrainError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line).map_err(|source| CoreError::Record { line: i + 1, source })?;
        out.push(ev);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Audit {
    pub events: usize,
    /// New scene's lineage parent is the scene it replaced.
    pub lineage_ok: usize,
    /// Target box, label, attributes and anchor bit-equal to the replaced scene.
    pub foreground_ok: usize,
    /// Replaced scene id was the sample's live scene at that point.
    pub chain_ok: usize,
}

impl Audit {
    pub fn clean(&self) -> bool {
        self.lineage_ok == self.events && self.foreground_ok == self.events && self.chain_ok == self.events
    }
}

/// Replays `events` over the initial pool and checks every swap.
pub fn audit(initial: &[Scene], events: &[ReplacementEvent]) -> Audit {
    let mut live: HashMap<usize, &Scene> = initial.iter().enumerate().collect();
    let mut a = Audit { events: events.len(), ..Default::default() };
    for ev in events {
        let Some(old) = live.get(&ev.sample_id).copied() else { continue };
        if old.id == ev.old_scene_id {
            a.chain_ok += 1;
        }
        if ev.scene.generation.parent.as_deref() == Some(old.id.as_str()) && ev.scene.id == ev.new_scene_id {
            a.lineage_ok += 1;
        }
        if old.target == ev.scene.target && old.same_foreground(&ev.scene) {
            a.foreground_ok += 1;
        }
        live.insert(ev.sample_id, &ev.scene);
    }
    a
}
