use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use syngrpo_core::env::{mutate_scene, EnvConfig, MutationDirective, Scene};

#[derive(Debug, Clone, PartialEq)]
pub struct JobInput {
    pub sample_id: u64,
    pub scene: Scene,
    pub description_tokens: Vec<u32>,
    pub seed: u64,
}

/// Turns a job into a new scene. An `Err` or a panic marks the job failed.
pub trait Backend: Send + Sync + 'static {
    fn generate(&self, job: &JobInput) -> Result<Scene, String>;
}

/// Decodes the description and regenerates the background.
pub struct MutatorBackend {
    env: EnvConfig,
}

impl MutatorBackend {
    pub fn new(env: EnvConfig) -> Self {
        MutatorBackend { env }
    }
}

impl Backend for MutatorBackend {
    fn generate(&self, job: &JobInput) -> Result<Scene, String> {
        let directive = MutationDirective::decode(&job.description_tokens, self.env.bucket_counts.len());
        mutate_scene(&job.scene, &directive, job.seed, &self.env).map_err(|e| e.to_string())
    }
}

/// Sleeps `fixed + U[0, jitter]` milliseconds before delegating. The jitter
/// draw is seeded by the job seed.
pub struct LatencyBackend<B> {
    inner: B,
    fixed_ms: u64,
    jitter_ms: u64,
}

impl<B: Backend> LatencyBackend<B> {
    pub fn new(inner: B, fixed_ms: u64, jitter_ms: u64) -> Self {
        LatencyBackend { inner, fixed_ms, jitter_ms }
    }

    pub fn delay(&self, seed: u64) -> Duration {
        let jitter = if self.jitter_ms == 0 {
            0
        } else {
            ChaCha8Rng::seed_from_u64(seed).random_range(0..=self.jitter_ms)
        };
        Duration::from_millis(self.fixed_ms + jitter)
    }
}

impl<B: Backend> Backend for LatencyBackend<B> {
    fn generate(&self, job: &JobInput) -> Result<Scene, String> {
        let d = self.delay(job.seed);
        if !d.is_zero() {
            std::thread::sleep(d);
        }
        self.inner.generate(job)
    }
}
