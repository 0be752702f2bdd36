//! Entropy and diversity measurement, the diversity reward, its drift
//! correction and description selection.
//!
//! Diversity of a sample is the population variance of the accuracy rewards of
//! its group. For rewards in `[0,1]` that variance is at most 1/4, which is
//! used to normalize it into `[0,1]` before anything else touches it.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Ratio guard for the smoothing calibration.
pub const BATCH_AVG_EPSILON: f64 = 1e-9;

/// Monte-Carlo entropy estimate in nats: the negated mean, over responses, of
/// each response's mean sampled-token log-probability.
pub fn response_entropy(group: &[Vec<f64>]) -> Result<f64> {
    if group.is_empty() {
        return Err(CoreError::contract("entropy of an empty group"));
    }
    let mut acc = 0.0;
    for resp in group {
        if resp.is_empty() {
            return Err(CoreError::contract("response without tokens"));
        }
        acc += resp.iter().sum::<f64>() / resp.len() as f64;
    }
    Ok(-acc / group.len() as f64)
}

/// Exact entropy `-Σ p ln p` of a categorical distribution.
pub fn exact_entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Accuracy rewards of the G responses for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRewardProfile(Vec<f64>);

impl GroupRewardProfile {
    pub fn new(rewards: Vec<f64>) -> Result<Self> {
        if rewards.len() < 2 {
            return Err(CoreError::contract(format!("group of {} responses, need >= 2", rewards.len())));
        }
        if let Some(r) = rewards.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(CoreError::contract(format!("accuracy reward {r} outside [0,1]")));
        }
        Ok(GroupRewardProfile(rewards))
    }

    pub fn rewards(&self) -> &[f64] {
        &self.0
    }
}

/// Population variance of the group's accuracy rewards, in `[0, 1/4]`.
pub fn raw_diversity(profile: &GroupRewardProfile) -> f64 {
    let r = profile.rewards();
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    var.min(0.25)
}

/// Maps a raw variance onto `[0,1]` using the 1/4 upper bound.
pub fn normalized_diversity(v_raw: f64) -> Result<f64> {
    if v_raw.is_nan() || v_raw < 0.0 {
        return Err(CoreError::contract(format!("raw diversity {v_raw} is negative")));
    }
    Ok((4.0 * v_raw).clamp(0.0, 1.0))
}

/// Running state of the diversity smoothing recurrence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityState {
    /// Batches folded in so far.
    pub k: u64,
    pub global_avg: f64,
    pub gamma: f64,
}

impl DiversityState {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(CoreError::contract(format!("smoothing weight {gamma} outside [0,1]")));
        }
        Ok(DiversityState { k: 0, global_avg: 0.0, gamma })
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.global_avg) {
            return Err(CoreError::contract(format!("invalid diversity state {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedBatch {
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub batch_avg: f64,
}

/// Folds one batch of normalized diversities into the moving average and
/// calibrates every sample by `global_avg / batch_avg`, clipped to `[0,1]`.
///
/// The average is updated first, then used for the same batch. The first
/// batch initializes the average to its own mean.
pub fn smooth_batch(raw: &[f64], state: &DiversityState) -> Result<(SmoothedBatch, DiversityState)> {
    if raw.is_empty() {
        return Err(CoreError::contract("smoothing an empty batch"));
    }
    state.validate()?;
    if let Some(v) = raw.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(CoreError::contract(format!("normalized diversity {v} outside [0,1]")));
    }
    let batch_avg = raw.iter().sum::<f64>() / raw.len() as f64;
    let global_avg = if state.k == 0 {
        batch_avg
    } else {
        // same recurrence as γ·g + (1-γ)·b, but exact when b == g
        state.global_avg + (1.0 - state.gamma) * (batch_avg - state.global_avg)
    };
    let smoothed = if batch_avg < BATCH_AVG_EPSILON {
        raw.to_vec()
    } else {
        let ratio = global_avg / batch_avg;
        raw.iter().map(|v| (v * ratio).clamp(0.0, 1.0)).collect()
    };
    let next = DiversityState { k: state.k + 1, global_avg: global_avg.clamp(0.0, 1.0), gamma: state.gamma };
    Ok((SmoothedBatch { raw: raw.to_vec(), smoothed, batch_avg }, next))
}

/// `1 - |v_pred - v_smoothed|`.
pub fn diversity_reward(v_pred: f64, v_smoothed: f64) -> Result<f64> {
    for (name, v) in [("predicted", v_pred), ("smoothed", v_smoothed)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(CoreError::contract(format!("{name} diversity {v} outside [0,1]")));
        }
    }
    Ok(1.0 - (v_pred - v_smoothed).abs())
}

/// Index of the highest diversity reward; the lowest index wins ties.
pub fn select_description(rewards: &[f64]) -> Result<usize> {
    if rewards.is_empty() {
        return Err(CoreError::contract("no descriptions to select from"));
    }
    let mut best = 0;
    for (i, r) in rewards.iter().enumerate().skip(1) {
        if *r > rewards[best] {
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile(v: &[f64]) -> GroupRewardProfile {
        GroupRewardProfile::new(v.to_vec()).unwrap()
    }

    /// Variance through E[x^2] - E[x]^2 in exact rationals (values are
    /// multiples of 1/2 here), independent of the two-pass float route.
    fn variance_oracle(halves: &[i64]) -> f64 {
        let n = halves.len() as i64;
        let s: i64 = halves.iter().sum();
        let s2: i64 = halves.iter().map(|h| h * h).sum();
        // values are h/2, so var = (n*s2 - s^2) / (4 n^2)
        (n * s2 - s * s) as f64 / (4 * n * n) as f64
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(response_entropy(&[vec![0.0; 3], vec![0.0]]).unwrap(), 0.0);
        let l4 = -(4f64.ln());
        let h = response_entropy(&vec![vec![l4]; 6]).unwrap();
        assert!((h - 4f64.ln()).abs() < 1e-15);
        assert!((exact_entropy(&[0.9, 0.1]) - 0.325_082_973_391_448_2).abs() < 1e-12);
        assert!(response_entropy(&[]).is_err());
        assert!(response_entropy(&[vec![]]).is_err());
    }

    #[test]
    fn diversity_examples() {
        assert_eq!(raw_diversity(&profile(&[0.3; 6])), 0.0);
        assert_eq!(raw_diversity(&profile(&[0.0, 0.0, 0.0, 1.0, 1.0, 1.0])), 0.25);
        let v = raw_diversity(&profile(&[0.0, 0.5, 1.0, 0.5, 0.5, 0.5]));
        let oracle = variance_oracle(&[0, 1, 2, 1, 1, 1]);
        assert!((oracle - 1.0 / 12.0).abs() < 1e-15);
        assert!((v - oracle).abs() < 1e-15);
        assert_eq!(normalized_diversity(0.0).unwrap(), 0.0);
        assert_eq!(normalized_diversity(0.25).unwrap(), 1.0);
        assert!((normalized_diversity(v).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(normalized_diversity(-0.01).is_err());
        assert!(GroupRewardProfile::new(vec![1.0]).is_err());
        assert!(GroupRewardProfile::new(vec![1.0, 1.5]).is_err());
    }

    #[test]
    fn smoothing_two_batch_trace() {
        let s0 = DiversityState::new(0.7).unwrap();
        let (b1, s1) = smooth_batch(&[0.4, 0.4], &s0).unwrap();
        assert_eq!(s1.global_avg, 0.4);
        assert_eq!(b1.smoothed, vec![0.4, 0.4]);
        let (b2, s2) = smooth_batch(&[0.1, 0.3], &s1).unwrap();
        assert!((b2.batch_avg - 0.2).abs() < 1e-15);
        // 0.7*0.4 + 0.3*0.2 = 0.34
        assert!((s2.global_avg - 0.34).abs() < 1e-15);
        assert!((b2.smoothed[0] - 0.17).abs() < 1e-15);
        assert_eq!(s2.k, 2);
    }

    #[test]
    fn smoothing_guards_zero_batch() {
        let s = DiversityState { k: 3, global_avg: 0.5, gamma: 0.7 };
        let (b, _) = smooth_batch(&[0.0, 0.0], &s).unwrap();
        assert_eq!(b.smoothed, vec![0.0, 0.0]);
        assert!(smooth_batch(&[], &s).is_err());
        assert!(smooth_batch(&[1.2], &s).is_err());
    }

    #[test]
    fn clip_binds_when_ratio_exceeds_one() {
        let mut state = DiversityState::new(0.7).unwrap();
        for avg in [0.9f64, 0.5, 0.2, 0.05] {
            let batch = [avg * 0.2, avg, (avg * 1.8).min(1.0)];
            let (b, next) = smooth_batch(&batch, &state).unwrap();
            assert!(b.smoothed.iter().all(|v| (0.0..=1.0).contains(v)));
            state = next;
        }
    }

    #[test]
    fn diversity_reward_and_selection_examples() {
        assert_eq!(diversity_reward(0.3, 0.3).unwrap(), 1.0);
        assert_eq!(diversity_reward(1.0, 0.0).unwrap(), 0.0);
        assert!((diversity_reward(0.17, 0.5).unwrap() - 0.67).abs() < 1e-15);
        assert!(diversity_reward(1.1, 0.5).is_err());
        assert_eq!(select_description(&[0.2, 0.9, 0.5]).unwrap(), 1);
        assert_eq!(select_description(&[0.9, 0.9, 0.1]).unwrap(), 0);
        assert_eq!(select_description(&[0.4; 5]).unwrap(), 0);
        assert!(select_description(&[]).is_err());
    }

    proptest! {
        #[test]
        fn raw_diversity_bounded_and_permutation_invariant(
            mut v in prop::collection::vec(0.0..=1.0f64, 2..12), rot in 0usize..12
        ) {
            let a = raw_diversity(&profile(&v));
            prop_assert!((0.0..=0.25).contains(&a));
            prop_assert!((0.0..=1.0).contains(&normalized_diversity(a).unwrap()));
            let len = v.len();
            v.rotate_left(rot % len);
            v.reverse();
            let b = raw_diversity(&profile(&v));
            prop_assert!((a - b).abs() <= 1e-15);
        }

        #[test]
        fn constant_stream_is_fixed_point(v in 0.0..=1.0f64, gamma in 0.0..=1.0f64, n in 1usize..30) {
            let mut state = DiversityState::new(gamma).unwrap();
            for _ in 0..n {
                let (b, next) = smooth_batch(&[v, v, v], &state).unwrap();
                for s in &b.smoothed {
                    prop_assert!((s - v).abs() <= 1e-15);
                }
                state = next;
            }
        }

        #[test]
        fn smoothed_values_stay_in_unit_interval(
            batches in prop::collection::vec(prop::collection::vec(0.0..=1.0f64, 1..8), 1..20),
            gamma in 0.0..=1.0f64,
        ) {
            let mut state = DiversityState::new(gamma).unwrap();
            for batch in &batches {
                let (b, next) = smooth_batch(batch, &state).unwrap();
                prop_assert!(b.smoothed.iter().all(|v| (0.0..=1.0).contains(v)));
                prop_assert!((0.0..=1.0).contains(&next.global_avg));
                state = next;
            }
        }

        #[test]
        fn diversity_reward_symmetric(a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
            let ab = diversity_reward(a, b).unwrap();
            prop_assert_eq!(ab, diversity_reward(b, a).unwrap());
            prop_assert_eq!(ab == 1.0, a == b);
        }

        #[test]
        fn selection_ignores_shifts_below_max(
            v in prop::collection::vec(0.0..1.0f64, 1..10), bump in 0.0..1.0f64
        ) {
            let best = select_description(&v).unwrap();
            let max = v[best];
            let second = v.iter().copied().filter(|x| *x < max).fold(f64::NEG_INFINITY, f64::max);
            if second.is_finite() {
                let c = bump * (max - second) * 0.99;
                let shifted: Vec<f64> = v.iter().map(|x| if *x < max { x + c } else { *x }).collect();
                prop_assert_eq!(select_description(&shifted).unwrap(), best);
            }
        }
    }
}
