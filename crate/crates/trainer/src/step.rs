//! One optimizer step: rollouts, rewards, diversity smoothing, advantages,
//! loss and update.

use serde::{Deserialize, Serialize};

use syngrpo_core::diversity::{
    diversity_reward, normalized_diversity, raw_diversity, response_entropy, select_description, smooth_batch,
    DiversityState, GroupRewardProfile,
};
use syngrpo_core::env::{parse_response, policy_rollout, scene_features, ResponseFormat, Scene};
use syngrpo_core::geometry::{format_reward, rec_accuracy_reward, total_reward};
use syngrpo_core::grpo::{
    group_advantages, grpo_loss_and_grad, optimizer_step, AdamWConfig, AdamWState, GroupSample, LossConfig,
};
use syngrpo_core::policy::{Head, PolicyParams};
use syngrpo_core::checkpoint::TrainingState;
use syngrpo_core::Exec;

use crate::config::{Mode, TrainConfig};
use crate::seeds::{derive, Stream};
use crate::TrainError;

/// Zero (uniform) policy, which is also the frozen reference.
pub fn initial_state(cfg: &TrainConfig) -> Result<TrainingState, TrainError> {
    let params = PolicyParams::zeros(cfg.env.policy_shape());
    let n = params.as_slice().len();
    Ok(TrainingState {
        reference: params.clone(),
        params,
        adam: AdamWState::new(n),
        diversity: DiversityState::new(cfg.gamma)?,
    })
}

pub fn format_for(mode: Mode) -> ResponseFormat {
    match mode {
        Mode::Grpo => ResponseFormat::Original,
        Mode::Syn => ResponseFormat::Synthesis,
    }
}

pub fn exec_for(cfg: &TrainConfig) -> Exec {
    if cfg.parallel {
        Exec::default()
    } else {
        Exec::Sequential
    }
}

/// Per-response reward inputs of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRewards {
    pub accuracy: Vec<f64>,
    pub format: Vec<f64>,
    /// Predicted diversity of each response, when it emitted one.
    pub predicted: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTrace {
    pub raw_diversity: f64,
    pub normalized_diversity: f64,
    pub smoothed_diversity: f64,
    pub accuracy: Vec<f64>,
    pub format: Vec<f64>,
    pub diversity: Vec<f64>,
    pub total: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Response whose description goes to the generator (syn mode).
    pub selected: Option<usize>,
}

/// Reward assembly for a batch, in order: raw diversity of each group,
/// normalization, one smoothing update for the whole batch, per-response
/// diversity reward (syn mode only), total reward, group advantages and
/// description selection.
pub fn assemble_rewards(
    mode: Mode,
    groups: &[GroupRewards],
    state: &DiversityState,
) -> Result<(Vec<RewardTrace>, DiversityState), TrainError> {
    let mut raw = Vec::with_capacity(groups.len());
    let mut normalized = Vec::with_capacity(groups.len());
    for g in groups {
        let v = raw_diversity(&GroupRewardProfile::new(g.accuracy.clone())?);
        raw.push(v);
        normalized.push(normalized_diversity(v)?);
    }
    let (smoothed, next) = smooth_batch(&normalized, state)?;
    let mut traces = Vec::with_capacity(groups.len());
    for (i, g) in groups.iter().enumerate() {
        let diversity: Vec<f64> = match mode {
            Mode::Grpo => vec![0.0; g.accuracy.len()],
            Mode::Syn => g
                .predicted
                .iter()
                .map(|p| p.map_or(Ok(0.0), |v| diversity_reward(v, smoothed.smoothed[i])))
                .collect::<Result<_, _>>()?,
        };
        let mut total = Vec::with_capacity(g.accuracy.len());
        for j in 0..g.accuracy.len() {
            total.push(total_reward(g.accuracy[j], g.format[j], diversity[j])?.total);
        }
        let advantages = group_advantages(&total)?.advantages;
        let selected = match mode {
            Mode::Grpo => None,
            Mode::Syn => Some(select_description(&diversity)?),
        };
        traces.push(RewardTrace {
            raw_diversity: raw[i],
            normalized_diversity: normalized[i],
            smoothed_diversity: smoothed.smoothed[i],
            accuracy: g.accuracy.clone(),
            format: g.format.clone(),
            diversity,
            total,
            advantages,
            selected,
        });
    }
    Ok((traces, next))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTrace {
    pub sample_id: usize,
    pub scene_id: String,
    pub texts: Vec<String>,
    pub rewards: RewardTrace,
    /// Description tokens of the selected response.
    pub selection: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub entropy: f64,
    pub raw_diversity: f64,
    pub diversity: f64,
    pub smoothed_diversity: f64,
    pub global_diversity: f64,
    pub reward_accuracy: f64,
    pub reward_format: f64,
    pub reward_diversity: f64,
    pub reward_total: f64,
    pub loss: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub stats: BatchStats,
    pub groups: Vec<GroupTrace>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    s / n.max(1) as f64
}

/// Runs one training step on `batch` (pairs of sample id and scene) and
/// updates `state` in place. On a non-finite loss the state is left as it was
/// and the error carries the batch traces for diagnosis.
pub fn process_batch(
    state: &mut TrainingState,
    batch: &[(usize, &Scene)],
    cfg: &TrainConfig,
    step: u64,
) -> Result<BatchOutcome, TrainError> {
    let exec = exec_for(cfg);
    let schema = cfg.env.schema(format_for(cfg.mode));
    // the behavior snapshot is the current policy: one update per rollout pass
    let behavior = &state.params;
    if cfg.rollout_cost_ms > 0 {
        std::thread::sleep(std::time::Duration::from_millis(cfg.rollout_cost_ms));
    }

    let rolled = exec.map(batch, |_, (sample_id, scene)| {
        let obs = scene_features(scene);
        let seed = derive(cfg.seed, Stream::Rollout, step, *sample_id as u64);
        policy_rollout(behavior, &state.reference, &obs, &schema, cfg.group_size, seed, *sample_id)
            .map(|r| (obs, r))
    });
    let rolled = rolled.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut inputs = Vec::with_capacity(batch.len());
    let mut descriptions = Vec::with_capacity(batch.len());
    let mut entropies = Vec::with_capacity(batch.len());
    for ((_, scene), (_, r)) in batch.iter().zip(&rolled) {
        let mut g = GroupRewards { accuracy: Vec::new(), format: Vec::new(), predicted: Vec::new() };
        let mut descs = Vec::new();
        for text in &r.texts {
            let parsed = parse_response(text, &schema);
            g.format.push(format_reward(&parsed));
            match parsed {
                Ok(p) => {
                    g.accuracy.push(rec_accuracy_reward(&scene.anchors[p.answer], &scene.target.bbox));
                    g.predicted.push(p.diversity);
                    descs.push(p.description);
                }
                Err(_) => {
                    g.accuracy.push(0.0);
                    g.predicted.push(None);
                    descs.push(None);
                }
            }
        }
        entropies.push(response_entropy(&r.head_logps(Head::Answer))?);
        inputs.push(g);
        descriptions.push(descs);
    }

    let (traces, next_diversity) = assemble_rewards(cfg.mode, &inputs, &state.diversity)?;

    let samples: Vec<GroupSample> = rolled
        .iter()
        .zip(&traces)
        .map(|((obs, r), t)| GroupSample {
            obs: obs.clone(),
            responses: r.records.clone(),
            advantages: t.advantages.clone(),
        })
        .collect();
    let loss_cfg = LossConfig { clip_eps: cfg.clip_eps, kl_coef: cfg.kl_coef };

    let groups: Vec<GroupTrace> = batch
        .iter()
        .zip(&rolled)
        .zip(traces)
        .zip(descriptions)
        .map(|((((sample_id, scene), (_, r)), rewards), descs)| GroupTrace {
            sample_id: *sample_id,
            scene_id: scene.id.clone(),
            texts: r.texts.clone(),
            selection: rewards.selected.and_then(|i| descs[i].clone()),
            rewards,
        })
        .collect();

    let out = match grpo_loss_and_grad(&state.params, &state.reference, &samples, loss_cfg, exec) {
        Ok(o) => o,
        Err(e) => return Err(TrainError::NonFinite { step, reason: e.to_string(), groups }),
    };
    let adam_cfg = AdamWConfig {
        lr: cfg.lr,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
        weight_decay: cfg.weight_decay,
    };
    let mut params = state.params.as_slice().to_vec();
    let mut adam = state.adam.clone();
    if let Err(e) = optimizer_step(&mut params, &out.grad, &mut adam, &adam_cfg) {
        return Err(TrainError::NonFinite { step, reason: e.to_string(), groups });
    }
    let stats = BatchStats {
        entropy: mean(entropies.iter().copied()),
        raw_diversity: mean(groups.iter().map(|g| g.rewards.raw_diversity)),
        diversity: mean(groups.iter().map(|g| g.rewards.normalized_diversity)),
        smoothed_diversity: mean(groups.iter().map(|g| g.rewards.smoothed_diversity)),
        global_diversity: next_diversity.global_avg,
        reward_accuracy: mean(groups.iter().flat_map(|g| g.rewards.accuracy.clone())),
        reward_format: mean(groups.iter().flat_map(|g| g.rewards.format.clone())),
        reward_diversity: mean(groups.iter().flat_map(|g| g.rewards.diversity.clone())),
        reward_total: mean(groups.iter().flat_map(|g| g.rewards.total.clone())),
        loss: out.loss,
        kl: out.kl,
    };
    state.params = PolicyParams::from_vec(*state.params.shape(), params)?;
    state.adam = adam;
    state.diversity = next_diversity;
    Ok(BatchOutcome { stats, groups })
}
