use serde::{Deserialize, Serialize};

use syngrpo_core::env::{greedy_answer, scene_features, Scene};
use syngrpo_core::geometry::{rec_accuracy_reward, BBox};
use syngrpo_core::metrics::accuracy_at_iou;
use syngrpo_core::policy::PolicyParams;

use crate::TrainError;

pub const EVAL_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenes: usize,
    /// Share of scenes whose greedy answer box has IoU above 0.5 with the target.
    pub accuracy: f64,
    /// Mean accuracy reward (IoU) of the greedy answers.
    pub mean_reward: f64,
}

/// Greedy decoding of the answer head on every scene.
pub fn evaluate(params: &PolicyParams, scenes: &[Scene]) -> Result<EvalReport, TrainError> {
    let mut preds: Vec<BBox> = Vec::with_capacity(scenes.len());
    let mut gts = Vec::with_capacity(scenes.len());
    let mut reward = 0.0;
    for s in scenes {
        let a = greedy_answer(params, &scene_features(s))?;
        preds.push(s.anchors[a]);
        gts.push(s.target.bbox);
        reward += rec_accuracy_reward(&s.anchors[a], &s.target.bbox);
    }
    Ok(EvalReport {
        scenes: scenes.len(),
        accuracy: accuracy_at_iou(&preds, &gts, EVAL_IOU)?,
        mean_reward: if scenes.is_empty() { 0.0 } else { reward / scenes.len() as f64 },
    })
}
