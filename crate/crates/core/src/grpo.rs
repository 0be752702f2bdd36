//! Group-relative advantages, the clipped surrogate with an exact KL penalty,
//! analytic gradients for the toy policy, and AdamW.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::exec::Exec;
use crate::policy::{softmax, Head, Observation, PolicyParams};

/// Reward spread below which a group carries no signal.
pub const DEGENERATE_STD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageGroup {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// `(r_i - mean) / std` with the population std; all zeros for a degenerate
/// group.
pub fn group_advantages(rewards: &[f64]) -> Result<AdvantageGroup> {
    if rewards.len() < 2 {
        return Err(CoreError::contract(format!("group of {} rewards, need >= 2", rewards.len())));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(CoreError::NonFinite("rewards"));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
    let advantages = if std < DEGENERATE_STD {
        vec![0.0; rewards.len()]
    } else {
        rewards.iter().map(|r| (r - mean) / std).collect()
    };
    Ok(AdvantageGroup { rewards: rewards.to_vec(), advantages })
}

/// `min(ratio * adv, clip(ratio, 1-eps, 1+eps) * adv)` for one token.
pub fn clipped_surrogate(logp_new: f64, logp_old: f64, adv: f64, eps: f64) -> Result<f64> {
    Ok(surrogate_parts(logp_new, logp_old, adv, eps)?.0)
}

/// Surrogate value plus the ratio when the unclipped branch is active.
fn surrogate_parts(logp_new: f64, logp_old: f64, adv: f64, eps: f64) -> Result<(f64, Option<f64>)> {
    if !(eps > 0.0) {
        return Err(CoreError::contract(format!("clip range {eps} must be positive")));
    }
    let ratio = (logp_new - logp_old).exp();
    if !ratio.is_finite() {
        return Err(CoreError::NonFinite("importance ratio"));
    }
    let plain = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    if plain <= clipped {
        Ok((plain, Some(ratio)))
    } else {
        Ok((clipped, None))
    }
}

/// Exact `KL(p || q)` in nats for two categorical distributions.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(CoreError::contract("distributions over different supports"));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(CoreError::contract("reference assigns zero mass where policy has mass"));
        }
        kl += pi * (pi.ln() - qi.ln());
    }
    Ok(kl.max(0.0))
}

/// KL summed over paired head distributions, scaled by `coef`.
pub fn kl_penalty(new_heads: &[Vec<f64>], ref_heads: &[Vec<f64>], coef: f64) -> Result<f64> {
    if new_heads.len() != ref_heads.len() {
        return Err(CoreError::contract("head count mismatch"));
    }
    let mut total = 0.0;
    for (p, q) in new_heads.iter().zip(ref_heads) {
        total += kl_divergence(p, q)?;
    }
    Ok(coef * total)
}

/// One sampled token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub head: Head,
    pub index: usize,
    /// Log-probability under the behavior policy that sampled it.
    pub logp_old: f64,
    pub logp_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub sample_id: usize,
    pub group_index: usize,
    pub tokens: Vec<TokenRecord>,
}

/// One sample's group, ready for the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSample {
    pub obs: Observation,
    pub responses: Vec<RolloutRecord>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub clip_eps: f64,
    pub kl_coef: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { clip_eps: 0.2, kl_coef: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Negated objective, averaged over samples.
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Mean surrogate term (same aggregation as the objective).
    pub surrogate: f64,
    /// Mean unscaled KL term.
    pub kl: f64,
}

struct SampleLoss {
    objective: f64,
    surrogate: f64,
    kl: f64,
    grad: Vec<f64>,
}

/// Negative GRPO objective and its gradient with respect to `params`.
///
/// Per sample the objective is `1/G Σ_i 1/|o_i| Σ_t (surrogate_t - β KL_t)`,
/// where `KL_t` is the exact KL of the head that emitted token t against the
/// frozen reference. Samples are averaged. Per-sample work is mapped with
/// `exec` and reduced in sample order.
pub fn grpo_loss_and_grad(
    params: &PolicyParams,
    reference: &PolicyParams,
    batch: &[GroupSample],
    cfg: LossConfig,
    exec: Exec,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(CoreError::contract("empty batch"));
    }
    if params.shape() != reference.shape() {
        return Err(CoreError::contract("reference policy has a different shape"));
    }
    let per_sample = exec.map(batch, |_, s| sample_loss(params, reference, s, cfg));
    let n = params.as_slice().len();
    let mut out = LossOutput { loss: 0.0, grad: vec![0.0; n], surrogate: 0.0, kl: 0.0 };
    let scale = 1.0 / batch.len() as f64;
    for s in per_sample {
        let s = s?;
        out.loss -= s.objective * scale;
        out.surrogate += s.surrogate * scale;
        out.kl += s.kl * scale;
        for (g, v) in out.grad.iter_mut().zip(&s.grad) {
            *g -= v * scale;
        }
    }
    if !out.loss.is_finite() || out.grad.iter().any(|g| !g.is_finite()) {
        return Err(CoreError::NonFinite("grpo loss"));
    }
    Ok(out)
}

struct HeadCache {
    head: Head,
    logp: Vec<f64>,
    probs: Vec<f64>,
    kl: f64,
    /// d KL / d logits = p_m * (ln p_m - ln q_m - KL)
    dkl: Vec<f64>,
}

impl HeadCache {
    fn new(params: &PolicyParams, reference: &PolicyParams, head: Head, obs: &Observation) -> Result<Self> {
        let logp = params.log_probs(head, obs);
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let ref_logp = reference.log_probs(head, obs);
        let kl = kl_divergence(&probs, &softmax(&reference.logits(head, obs)))?;
        let dkl = probs.iter().zip(&logp).zip(&ref_logp).map(|((p, lp), lq)| p * (lp - lq - kl)).collect();
        Ok(HeadCache { head, logp, probs, kl, dkl })
    }
}

fn sample_loss(
    params: &PolicyParams,
    reference: &PolicyParams,
    sample: &GroupSample,
    cfg: LossConfig,
) -> Result<SampleLoss> {
    params.check_observation(&sample.obs)?;
    let g = sample.responses.len();
    if g == 0 || sample.advantages.len() != g {
        return Err(CoreError::contract("advantages do not match responses"));
    }

    // Head distributions are shared by every token a head emits.
    let mut heads: Vec<HeadCache> = Vec::new();
    for tok in sample.responses.iter().flat_map(|r| &r.tokens) {
        if heads.iter().all(|h| h.head != tok.head) {
            heads.push(HeadCache::new(params, reference, tok.head, &sample.obs)?);
        }
    }

    let mut grad = vec![0.0; params.as_slice().len()];
    let (mut objective, mut surrogate_sum, mut kl_sum) = (0.0, 0.0, 0.0);
    for (resp, &adv) in sample.responses.iter().zip(&sample.advantages) {
        if resp.tokens.is_empty() {
            return Err(CoreError::contract("response without tokens"));
        }
        let w = 1.0 / (g as f64 * resp.tokens.len() as f64);
        for tok in &resp.tokens {
            let HeadCache { logp, probs, kl, dkl, .. } =
                heads.iter().find(|h| h.head == tok.head).expect("head cached above");
            if tok.index >= logp.len() {
                return Err(CoreError::contract("token index outside head support"));
            }
            let (surr, active_ratio) = surrogate_parts(logp[tok.index], tok.logp_old, adv, cfg.clip_eps)?;
            objective += w * (surr - cfg.kl_coef * kl);
            surrogate_sum += w * surr;
            kl_sum += w * *kl;

            // d/dz of the token's term: ratio*adv*(e_k - p) when unclipped,
            // minus beta * dKL/dz
            let mut dz: Vec<f64> = dkl.iter().map(|d| -cfg.kl_coef * d * w).collect();
            if let Some(ratio) = active_ratio {
                let c = ratio * adv * w;
                for (j, p) in probs.iter().enumerate() {
                    dz[j] -= c * p;
                }
                dz[tok.index] += c;
            }
            params.accumulate_grad(tok.head, &sample.obs, &dz, &mut grad);
        }
    }
    Ok(SampleLoss { objective, surrogate: surrogate_sum, kl: kl_sum, grad })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-6, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamWState {
    pub fn new(n: usize) -> Self {
        AdamWState { step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }
}

/// AdamW with bias correction; decay is applied to the parameter directly
/// before the adaptive update. A non-finite gradient leaves everything
/// untouched.
pub fn optimizer_step(params: &mut [f64], grad: &[f64], state: &mut AdamWState, cfg: &AdamWConfig) -> Result<()> {
    if grad.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(CoreError::contract("optimizer state shape does not match parameters"));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(CoreError::NonFinite("gradient"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        params[i] -= cfg.lr * cfg.weight_decay * params[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}
