//! Foreground-preserving scene regeneration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{grid_anchor_count, place_distractors, stable_hash, ClutterConfig, Lineage, Scene};
use super::EnvConfig;
use crate::error::{CoreError, Result};

/// Similarity change selected by the second description token.
pub const SIMILARITY_DELTAS: [f64; 4] = [-0.1, 0.0, 0.1, 0.2];

/// What a description asks the generator to do with the background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationDirective {
    pub distractor_bucket: u8,
    pub similarity_delta: f64,
    pub layout: u8,
    pub palette: u8,
}

impl MutationDirective {
    /// Total decoding: any token sequence yields a directive. Missing tokens
    /// read as 0 and every token is taken modulo 4 (modulo the bucket count
    /// for the first one).
    pub fn decode(tokens: &[u32], buckets: usize) -> Self {
        let t = |i: usize| tokens.get(i).copied().unwrap_or(0);
        MutationDirective {
            distractor_bucket: (t(0) as usize % buckets.max(1)) as u8,
            similarity_delta: SIMILARITY_DELTAS[t(1) as usize % 4],
            layout: (t(2) % 4) as u8,
            palette: (t(3) % 4) as u8,
        }
    }
}

/// Deterministic id for the child of `parent` generated with `seed`.
pub fn child_id(parent: &str, seed: u64) -> String {
    format!("gen-{:016x}", stable_hash(&[parent.as_bytes(), &seed.to_le_bytes()]))
}

/// Regenerates everything except the target: its box, label, attributes and
/// anchor index are copied bit-for-bit, and so is the anchor set. Distractors
/// are re-placed according to the directive; a request larger than the
/// layout's capacity is clamped and flagged in the lineage.
pub fn mutate_scene(scene: &Scene, directive: &MutationDirective, seed: u64, cfg: &EnvConfig) -> Result<Scene> {
    scene.validate().map_err(|e| CoreError::contract(format!("parent scene invalid: {e}")))?;
    let grid_count = grid_anchor_count(scene, cfg)?;
    if directive.distractor_bucket as usize >= cfg.bucket_counts.len() {
        return Err(CoreError::contract("directive bucket outside configured buckets"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clutter = ClutterConfig {
        distractor_bucket: directive.distractor_bucket,
        similarity: (scene.clutter_config.similarity + directive.similarity_delta).clamp(0.0, 1.0),
        layout: directive.layout,
        palette: directive.palette,
    };
    let requested = cfg.bucket_counts[directive.distractor_bucket as usize];
    let (distractors, clamped) = place_distractors(
        &scene.anchors,
        grid_count,
        &scene.target,
        requested,
        &clutter,
        cfg.attribute_values,
        &mut rng,
    );
    let child = Scene {
        id: child_id(&scene.id, seed),
        target: scene.target.clone(),
        anchors: scene.anchors.clone(),
        distractors,
        clutter_config: clutter,
        generation: Lineage { parent: Some(scene.id.clone()), epoch: scene.generation.epoch + 1, seed, clamped },
    };
    debug_assert!(child.validate().is_ok());
    Ok(child)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{difficulty_score, sample_scene};
    use proptest::prelude::*;

    #[test]
    fn decode_is_total() {
        assert_eq!(
            MutationDirective::decode(&[], 4),
            MutationDirective { distractor_bucket: 0, similarity_delta: -0.1, layout: 0, palette: 0 }
        );
        let d = MutationDirective::decode(&[7, 3, 14, 9, 100], 4);
        assert_eq!((d.distractor_bucket, d.similarity_delta, d.layout, d.palette), (3, 0.2, 2, 1));
        let d = MutationDirective::decode(&[u32::MAX, u32::MAX, u32::MAX, u32::MAX], 4);
        assert!(d.distractor_bucket < 4 && d.layout < 4 && d.palette < 4);
    }

    #[test]
    fn similarity_increase_is_strict_until_cap() {
        let cfg = EnvConfig::default();
        let mut s = sample_scene(&cfg, 1).unwrap();
        let up = MutationDirective { distractor_bucket: 2, similarity_delta: 0.2, layout: 0, palette: 0 };
        for i in 0..10 {
            let child = mutate_scene(&s, &up, i, &cfg).unwrap();
            if s.clutter_config.similarity < 1.0 {
                assert!(child.clutter_config.similarity > s.clutter_config.similarity);
            } else {
                assert_eq!(child.clutter_config.similarity, 1.0);
            }
            s = child;
        }
    }

    #[test]
    fn oversized_request_is_clamped_and_recorded() {
        let cfg = EnvConfig { bucket_counts: vec![1, 50], ..Default::default() };
        let s = sample_scene(&cfg, 4).unwrap();
        let d = MutationDirective { distractor_bucket: 1, similarity_delta: 0.0, layout: 3, palette: 0 };
        let child = mutate_scene(&s, &d, 8, &cfg).unwrap();
        assert!(child.generation.clamped);
        assert!(child.distractors.len() < 50);
        assert!(difficulty_score(&child) > 0.0);
    }

    #[test]
    fn lineage_points_at_parent() {
        let cfg = EnvConfig::default();
        let s = sample_scene(&cfg, 2).unwrap();
        let d = MutationDirective::decode(&[1, 2, 3, 4], 4);
        let child = mutate_scene(&s, &d, 77, &cfg).unwrap();
        assert_eq!(child.generation.parent.as_deref(), Some(s.id.as_str()));
        assert_eq!(child.generation.epoch, 1);
        assert_eq!(child.generation.seed, 77);
        assert_eq!(child, mutate_scene(&s, &d, 77, &cfg).unwrap());
        assert_ne!(child.id, mutate_scene(&s, &d, 78, &cfg).unwrap().id);
    }

    proptest! {
        #[test]
        fn foreground_is_preserved(scene_seed in 0u64..10_000, seed in any::<u64>(), toks in prop::collection::vec(0u32..16, 4)) {
            let cfg = EnvConfig::default();
            let s = sample_scene(&cfg, scene_seed).unwrap();
            let child = mutate_scene(&s, &MutationDirective::decode(&toks, cfg.bucket_counts.len()), seed, &cfg).unwrap();
            prop_assert_eq!(&child.target, &s.target);
            prop_assert!(s.same_foreground(&child));
            prop_assert!(child.validate().is_ok());
        }
    }
}
