//! The toy policy: factorized linear heads over scene features.
//!
//! The answer head scores every anchor with a shared weight vector over the
//! anchor's feature row. The diversity head and each description head are
//! linear maps from a pooled scene context vector to their own logits. All
//! parameters live in one flat tensor:
//!
//! ```text
//! [ answer: D | diversity: B x P | describe: M x V x P ]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolicyShape {
    /// Per-anchor feature width (D).
    pub feature_dim: usize,
    /// Pooled scene context width (P).
    pub context_dim: usize,
    /// Diversity buckets (B); bucket b means v = b / (B - 1).
    pub diversity_buckets: usize,
    /// Description length in tokens (M).
    pub description_len: usize,
    /// Description vocabulary size (V).
    pub vocab: usize,
}

impl PolicyShape {
    pub fn num_params(&self) -> usize {
        self.feature_dim
            + self.diversity_buckets * self.context_dim
            + self.description_len * self.vocab * self.context_dim
    }

    fn diversity_offset(&self) -> usize {
        self.feature_dim
    }

    fn describe_offset(&self, slot: usize) -> usize {
        self.feature_dim
            + self.diversity_buckets * self.context_dim
            + slot * self.vocab * self.context_dim
    }
}

/// Which output head produced a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Head {
    Answer,
    Diversity,
    Describe(usize),
}

/// Policy input for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// One feature row per anchor.
    pub anchors: Vec<Vec<f64>>,
    pub context: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    shape: PolicyShape,
    data: Vec<f64>,
}

impl PolicyParams {
    /// All-zero parameters: every head starts uniform.
    pub fn zeros(shape: PolicyShape) -> Self {
        PolicyParams { shape, data: vec![0.0; shape.num_params()] }
    }

    pub fn from_vec(shape: PolicyShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.num_params() {
            return Err(CoreError::contract(format!(
                "{} parameters for a shape needing {}",
                data.len(),
                shape.num_params()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite("policy parameters"));
        }
        Ok(PolicyParams { shape, data })
    }

    pub fn shape(&self) -> &PolicyShape {
        &self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn check_observation(&self, obs: &Observation) -> Result<()> {
        if obs.anchors.is_empty() {
            return Err(CoreError::contract("observation without anchors"));
        }
        if obs.anchors.iter().any(|row| row.len() != self.shape.feature_dim) {
            return Err(CoreError::contract("anchor feature width does not match policy"));
        }
        if obs.context.len() != self.shape.context_dim {
            return Err(CoreError::contract("context width does not match policy"));
        }
        Ok(())
    }

    fn context_head(&self, offset: usize, rows: usize, context: &[f64]) -> Vec<f64> {
        let p = self.shape.context_dim;
        (0..rows)
            .map(|r| {
                let w = &self.data[offset + r * p..offset + (r + 1) * p];
                w.iter().zip(context).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    pub fn logits(&self, head: Head, obs: &Observation) -> Vec<f64> {
        match head {
            Head::Answer => {
                let w = &self.data[..self.shape.feature_dim];
                obs.anchors.iter().map(|row| row.iter().zip(w).map(|(a, b)| a * b).sum()).collect()
            }
            Head::Diversity => {
                self.context_head(self.shape.diversity_offset(), self.shape.diversity_buckets, &obs.context)
            }
            Head::Describe(slot) => {
                self.context_head(self.shape.describe_offset(slot), self.shape.vocab, &obs.context)
            }
        }
    }

    /// Log-probabilities of one head.
    pub fn log_probs(&self, head: Head, obs: &Observation) -> Vec<f64> {
        log_softmax(&self.logits(head, obs))
    }

    /// Adds `dlogits` pulled back through `head` into `grad`.
    pub fn accumulate_grad(&self, head: Head, obs: &Observation, dlogits: &[f64], grad: &mut [f64]) {
        let p = self.shape.context_dim;
        match head {
            Head::Answer => {
                let g = &mut grad[..self.shape.feature_dim];
                for (row, d) in obs.anchors.iter().zip(dlogits) {
                    for (gi, x) in g.iter_mut().zip(row) {
                        *gi += d * x;
                    }
                }
            }
            Head::Diversity | Head::Describe(_) => {
                let offset = match head {
                    Head::Diversity => self.shape.diversity_offset(),
                    Head::Describe(slot) => self.shape.describe_offset(slot),
                    Head::Answer => unreachable!(),
                };
                for (r, d) in dlogits.iter().enumerate() {
                    let g = &mut grad[offset + r * p..offset + (r + 1) * p];
                    for (gi, x) in g.iter_mut().zip(&obs.context) {
                        *gi += d * x;
                    }
                }
            }
        }
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> PolicyShape {
        PolicyShape { feature_dim: 3, context_dim: 2, diversity_buckets: 4, description_len: 2, vocab: 5 }
    }

    #[test]
    fn zero_params_are_uniform() {
        let p = PolicyParams::zeros(shape());
        let obs = Observation { anchors: vec![vec![1.0, 0.5, 0.0]; 7], context: vec![1.0, 0.3] };
        for head in [Head::Answer, Head::Diversity, Head::Describe(1)] {
            let probs = softmax(&p.logits(head, &obs));
            let n = probs.len() as f64;
            assert!(probs.iter().all(|q| (q - 1.0 / n).abs() < 1e-15));
        }
        assert_eq!(p.as_slice().len(), 3 + 4 * 2 + 2 * 5 * 2);
    }

    #[test]
    fn log_softmax_is_stable_and_normalized() {
        let lp = log_softmax(&[1000.0, 999.0, -1000.0]);
        assert!(lp.iter().all(|x| x.is_finite()));
        let s: f64 = lp.iter().map(|x| x.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(PolicyParams::from_vec(shape(), vec![0.0; 3]).is_err());
        let mut v = vec![0.0; shape().num_params()];
        v[0] = f64::NAN;
        assert!(PolicyParams::from_vec(shape(), v).is_err());
        let p = PolicyParams::zeros(shape());
        let obs = Observation { anchors: vec![vec![1.0; 2]], context: vec![1.0, 0.0] };
        assert!(p.check_observation(&obs).is_err());
    }

    #[test]
    fn head_blocks_do_not_overlap() {
        let s = shape();
        let n = s.num_params();
        let data: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let p = PolicyParams::from_vec(s, data).unwrap();
        let obs = Observation { anchors: vec![vec![1.0, 0.0, 0.0]], context: vec![1.0, 0.0] };
        assert_eq!(p.logits(Head::Answer, &obs), vec![0.0]);
        assert_eq!(p.logits(Head::Diversity, &obs), vec![3.0, 5.0, 7.0, 9.0]);
        assert_eq!(p.logits(Head::Describe(0), &obs)[0], 11.0);
        assert_eq!(p.logits(Head::Describe(1), &obs)[4], 11.0 + 10.0 + 8.0);
    }
}
