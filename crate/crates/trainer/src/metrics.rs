//! Per-step metrics records.
//!
//! `metrics.jsonl` carries one [`MetricsRecord`] per line, fields in the
//! order below; `version` changes whenever a field is renamed or removed.
//! Eval fields are omitted on steps without an evaluation.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::step::BatchStats;

pub const METRICS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub version: u32,
    /// Zero-based step index.
    pub step: u64,
    /// One-based epoch.
    pub epoch: usize,
    /// Monte-Carlo entropy of the answer head, nats.
    pub entropy: f64,
    /// Mean group reward variance, before normalization.
    pub raw_diversity: f64,
    /// Mean normalized diversity in [0,1].
    pub diversity: f64,
    pub smoothed_diversity: f64,
    /// Moving average after this batch.
    pub global_diversity: f64,
    pub reward_accuracy: f64,
    pub reward_format: f64,
    pub reward_diversity: f64,
    pub reward_total: f64,
    pub loss: f64,
    pub kl: f64,
    /// Scenes swapped into the pool before this step.
    pub replacements: usize,
    pub batch_difficulty: f64,
    /// Mean difficulty of the whole live pool at this step.
    pub pool_difficulty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_eval_accuracy: Option<f64>,
}

impl MetricsRecord {
    pub fn new(step: u64, epoch: usize, s: &BatchStats) -> Self {
        MetricsRecord {
            version: METRICS_VERSION,
            step,
            epoch,
            entropy: s.entropy,
            raw_diversity: s.raw_diversity,
            diversity: s.diversity,
            smoothed_diversity: s.smoothed_diversity,
            global_diversity: s.global_diversity,
            reward_accuracy: s.reward_accuracy,
            reward_format: s.reward_format,
            reward_diversity: s.reward_diversity,
            reward_total: s.reward_total,
            loss: s.loss,
            kl: s.kl,
            replacements: 0,
            batch_difficulty: 0.0,
            pool_difficulty: 0.0,
            eval_accuracy: None,
            eval_reward: None,
            hard_eval_accuracy: None,
        }
    }
}

pub fn write_record(rec: &MetricsRecord, mut w: impl Write) -> std::io::Result<()> {
    serde_json::to_writer(&mut w, rec)?;
    w.write_all(b"\n")
}

/// Parses a metrics file, skipping lines that do not decode. Returns the
/// records and the number of skipped lines.
pub fn read_records(reader: impl BufRead) -> std::io::Result<(Vec<MetricsRecord>, usize)> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<MetricsRecord>(&line) {
            Ok(r) if r.version == METRICS_VERSION => out.push(r),
            _ => skipped += 1,
        }
    }
    Ok((out, skipped))
}

/// Mean of `f` over the records of `epoch`.
pub fn epoch_mean(records: &[MetricsRecord], epoch: usize, f: impl Fn(&MetricsRecord) -> f64) -> Option<f64> {
    let vals: Vec<f64> = records.iter().filter(|r| r.epoch == epoch).map(f).collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}
