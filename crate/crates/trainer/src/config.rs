use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use syngrpo_core::env::EnvConfig;

use crate::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Plain GRPO on a static pool.
    Grpo,
    /// Diversity reward plus online replacement of samples.
    Syn,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Grpo => "grpo",
            Mode::Syn => "syn",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "grpo" => Ok(Mode::Grpo),
            "syn" => Ok(Mode::Syn),
            other => Err(format!("unknown mode {other:?} (expected grpo or syn)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Root of every random stream in the run.
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Responses per sample (G).
    pub group_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Weight on history in the diversity moving average.
    pub gamma: f64,
    pub clip_eps: f64,
    pub kl_coef: f64,
    /// Training scenes; ignored when `manifest` is set.
    pub pool_size: usize,
    pub eval_size: usize,
    pub hard_eval_size: usize,
    /// Scene files to use instead of sampling splits from `seed`.
    pub manifest: Option<PathBuf>,
    /// Evaluate every this many steps (and always after the last); 0 = last only.
    pub eval_every: usize,
    /// Write a checkpoint every this many steps (and always after the last); 0 = last only.
    pub checkpoint_every: usize,
    /// Simulated policy forward time per step, in milliseconds.
    pub rollout_cost_ms: u64,
    pub server_url: Option<String>,
    /// Wait for every submitted job before the next step (reproducible, slow).
    pub sync_replacements: bool,
    pub poll_interval_ms: u64,
    pub request_timeout_ms: u64,
    /// Train without replacements when the server is unreachable at startup.
    pub allow_degraded: bool,
    /// Map per-sample work over threads.
    pub parallel: bool,
    pub env: EnvConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Grpo,
            seed: 0,
            epochs: 5,
            batch_size: 20,
            group_size: 6,
            lr: 1e-6,
            weight_decay: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            gamma: 0.7,
            clip_eps: 0.2,
            kl_coef: 1e-3,
            pool_size: 400,
            eval_size: 200,
            hard_eval_size: 200,
            manifest: None,
            eval_every: 20,
            checkpoint_every: 0,
            rollout_cost_ms: 0,
            server_url: None,
            sync_replacements: false,
            poll_interval_ms: 10,
            request_timeout_ms: 5000,
            allow_degraded: false,
            parallel: true,
            env: EnvConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if self.group_size < 2 {
            return bad(format!("group_size {} must be at least 2", self.group_size));
        }
        if self.manifest.is_none() && self.pool_size < self.batch_size {
            return bad(format!("pool_size {} is smaller than one batch", self.pool_size));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} must lie in (0,1)", self.gamma));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad(format!("clip_eps {} must lie in (0,1)", self.clip_eps));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be positive".into());
        }
        if self.kl_coef < 0.0 || self.weight_decay < 0.0 {
            return bad("kl_coef and weight_decay must be non-negative".into());
        }
        self.env.validate()?;
        Ok(())
    }

    pub fn steps_per_epoch(&self, pool: usize) -> usize {
        pool / self.batch_size
    }
}
