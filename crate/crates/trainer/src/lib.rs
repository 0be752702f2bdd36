//! Training loop: rollouts, diversity-aware rewards, GRPO updates and online
//! replacement of training scenes through the generation server.
//!
//! A run directory holds:
//!
//! ```text
//! config.snapshot   TOML of the effective TrainConfig
//! metrics.jsonl     one MetricsRecord per step
//! timing.jsonl      wall-clock milliseconds per step
//! ledger.jsonl      one ReplacementEvent per swapped scene
//! events.log        submission/rejection counters and warnings
//! checkpoints/      step-NNNNNN.ckpt (+ .sidecar.json with pool and ledger)
//! ```

pub mod config;
pub mod evaluate;
pub mod ledger;
pub mod metrics;
pub mod replace;
pub mod run;
pub mod seeds;
pub mod step;

use thiserror::Error;

pub use config::{Mode, TrainConfig};
pub use run::{run_training, RunOptions, RunSummary};
use syngrpo_core::CoreError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("generation server: {0}")]
    Server(String),
    #[error("step {step}: non-finite update ({reason})")]
    NonFinite { step: u64, reason: String, groups: Vec<step::GroupTrace> },
    #[error("replay diverged: {0}")]
    Replay(String),
    #[error("cannot resume: {0}")]
    Resume(String),
}
