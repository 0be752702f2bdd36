//! Synthetic scenes and the policy interface that stands in for images and a
//! multimodal model.
//!
//! A scene is a set of anchor boxes, one of which holds the referred target
//! object; distractor objects share some of the target's attributes. The
//! policy picks an anchor (the answer), predicts how varied its own answers are
//! (a diversity bucket) and emits a short token description that the data
//! server decodes into a background mutation.

pub mod dataset;
pub mod features;
pub mod mutate;
pub mod response;
pub mod rollout;
pub mod scene;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::policy::PolicyShape;

pub use features::scene_features;
pub use mutate::{mutate_scene, MutationDirective};
pub use response::{parse_response, serialize_response, ParseError, ParsedResponse, ResponseFormat, ResponseSchema};
pub use rollout::{greedy_answer, policy_rollout, GroupRollout};
pub use scene::{difficulty_score, sample_scene, Scene};

/// Width of the pooled scene context fed to the diversity and description heads.
pub const CONTEXT_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Anchor proposals per scene (A).
    pub anchors: usize,
    /// How many of the anchors are jittered copies of grid anchors.
    pub jittered: usize,
    pub grid_cols: usize,
    pub grid_rows: usize,
    /// Attributes per object (K); attribute 0 is the class label.
    pub attributes: usize,
    pub attribute_values: u8,
    /// Distractor count for each clutter bucket.
    pub bucket_counts: Vec<usize>,
    /// Inclusive bucket range for freshly sampled scenes.
    pub bucket_range: (u8, u8),
    /// Inclusive similarity range for freshly sampled scenes.
    pub similarity_range: (f64, f64),
    pub description_len: usize,
    pub vocab: usize,
    pub diversity_buckets: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            anchors: 10,
            jittered: 2,
            grid_cols: 4,
            grid_rows: 3,
            attributes: 4,
            attribute_values: 4,
            bucket_counts: vec![1, 3, 5, 7],
            bucket_range: (0, 1),
            similarity_range: (0.0, 0.4),
            description_len: 4,
            vocab: 16,
            diversity_buckets: 11,
        }
    }
}

impl EnvConfig {
    /// Scenes with many distractors that closely resemble the target.
    pub fn hard(&self) -> Self {
        let top = (self.bucket_counts.len() - 1) as u8;
        EnvConfig { bucket_range: (top, top), similarity_range: (0.7, 1.0), ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.to_string()));
        if self.anchors < 2 {
            return bad("need at least 2 anchors");
        }
        if self.jittered >= self.anchors {
            return bad("jittered anchors must be fewer than anchors");
        }
        if self.anchors - self.jittered > self.grid_cols * self.grid_rows {
            return bad("grid has fewer cells than grid anchors");
        }
        if self.attributes == 0 || self.attribute_values < 2 {
            return bad("need at least one attribute with two values");
        }
        if self.bucket_counts.is_empty() || self.bucket_counts.len() > 256 {
            return bad("bucket_counts must list 1..=256 entries");
        }
        let (lo, hi) = self.bucket_range;
        if lo > hi || hi as usize >= self.bucket_counts.len() {
            return bad("bucket_range outside bucket_counts");
        }
        let (slo, shi) = self.similarity_range;
        if !(0.0..=1.0).contains(&slo) || !(0.0..=1.0).contains(&shi) || slo > shi {
            return bad("similarity_range must be an ordered sub-range of [0,1]");
        }
        if self.description_len == 0 || self.vocab == 0 || self.diversity_buckets < 2 {
            return bad("description_len, vocab must be positive and diversity_buckets >= 2");
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        features::feature_dim(self.attributes)
    }

    pub fn policy_shape(&self) -> PolicyShape {
        PolicyShape {
            feature_dim: self.feature_dim(),
            context_dim: CONTEXT_DIM,
            diversity_buckets: self.diversity_buckets,
            description_len: self.description_len,
            vocab: self.vocab,
        }
    }

    pub fn schema(&self, format: ResponseFormat) -> ResponseSchema {
        ResponseSchema {
            format,
            anchors: self.anchors,
            description_len: self.description_len,
            vocab: self.vocab,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        EnvConfig::default().validate().unwrap();
        EnvConfig::default().hard().validate().unwrap();
    }

    #[test]
    fn rejects_single_anchor() {
        let c = EnvConfig { anchors: 1, jittered: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
