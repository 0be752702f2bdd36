//! Group sampling from the toy policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::response::{serialize_response, ParsedResponse, ResponseFormat, ResponseSchema};
use crate::error::{CoreError, Result};
use crate::grpo::{RolloutRecord, TokenRecord};
use crate::policy::{log_softmax, Head, Observation, PolicyParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRollout {
    pub records: Vec<RolloutRecord>,
    /// Serialized response text, one per record.
    pub texts: Vec<String>,
}

impl GroupRollout {
    /// Behavior log-probabilities of the tokens emitted by `head`, grouped per
    /// response. Input for the entropy estimate.
    pub fn head_logps(&self, head: Head) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .map(|r| r.tokens.iter().filter(|t| t.head == head).map(|t| t.logp_old).collect())
            .collect()
    }
}

fn checked_log_probs(params: &PolicyParams, head: Head, obs: &Observation) -> Result<Vec<f64>> {
    let logits = params.logits(head, obs);
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(CoreError::NonFinite("policy logits"));
    }
    Ok(log_softmax(&logits))
}

fn sample_index(logp: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    // rounding left u above the running sum; fall back to the last live entry
    logp.iter().rposition(|lp| *lp > f64::NEG_INFINITY).unwrap_or(0)
}

/// Samples `g` responses for one observation.
///
/// Response `i` draws from its own ChaCha stream `i` under `seed`, so a group
/// is reproducible regardless of how groups are scheduled. In the original
/// format only the answer head is sampled; the synthesis format adds one
/// diversity token and `description_len` description tokens. `behavior` is
/// the snapshot that samples (its log-probs become `logp_old`).
pub fn policy_rollout(
    behavior: &PolicyParams,
    reference: &PolicyParams,
    obs: &Observation,
    schema: &ResponseSchema,
    g: usize,
    seed: u64,
    sample_id: usize,
) -> Result<GroupRollout> {
    if g < 2 {
        return Err(CoreError::contract("group size must be at least 2"));
    }
    behavior.check_observation(obs)?;
    reference.check_observation(obs)?;
    if obs.anchors.len() != schema.anchors {
        return Err(CoreError::contract("schema anchor count does not match observation"));
    }
    let shape = behavior.shape();
    let mut heads = vec![Head::Answer];
    if schema.format == ResponseFormat::Synthesis {
        heads.push(Head::Diversity);
        heads.extend((0..shape.description_len).map(Head::Describe));
    }
    let tables: Vec<(Vec<f64>, Vec<f64>)> = heads
        .iter()
        .map(|&h| Ok((checked_log_probs(behavior, h, obs)?, checked_log_probs(reference, h, obs)?)))
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(g);
    let mut texts = Vec::with_capacity(g);
    for i in 0..g {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let tokens: Vec<TokenRecord> = heads
            .iter()
            .zip(&tables)
            .map(|(&head, (lp, lr))| {
                let index = sample_index(lp, &mut rng);
                TokenRecord { head, index, logp_old: lp[index], logp_ref: lr[index] }
            })
            .collect();
        let answer = tokens[0].index;
        let (diversity, description) = match schema.format {
            ResponseFormat::Original => (None, None),
            ResponseFormat::Synthesis => {
                let buckets = shape.diversity_buckets;
                let v = tokens[1].index as f64 / (buckets - 1) as f64;
                (Some(v), Some(tokens[2..].iter().map(|t| t.index as u32).collect()))
            }
        };
        let response = ParsedResponse {
            reasoning: format!("compared {} anchors against the referring attributes", obs.anchors.len()),
            diversity,
            description,
            answer,
        };
        texts.push(serialize_response(&response));
        records.push(RolloutRecord { sample_id, group_index: i, tokens });
    }
    Ok(GroupRollout { records, texts })
}

/// Argmax of the answer head; ties go to the lowest anchor index.
pub fn greedy_answer(params: &PolicyParams, obs: &Observation) -> Result<usize> {
    params.check_observation(obs)?;
    let logits = params.logits(Head::Answer, obs);
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(CoreError::NonFinite("policy logits"));
    }
    let mut best = 0;
    for (i, z) in logits.iter().enumerate() {
        if *z > logits[best] {
            best = i;
        }
    }
    Ok(best)
}
