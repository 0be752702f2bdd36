//! Boxes, IoU and the reward terms built on top of them.

use serde::{Deserialize, Serialize};

use crate::env::response::{ParseError, ParsedResponse};
use crate::error::{CoreError, Result};
use crate::metrics::{mean_average_precision, DetectionSet, ImageDetections, ScoredBox};

/// Axis-aligned box in normalized scene coordinates.
///
/// Construction rejects zero-area and out-of-range boxes. Serialized as
/// `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(CoreError::InvalidBox { coords, reason: "non-finite coordinate" });
        }
        if coords.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(CoreError::InvalidBox { coords, reason: "coordinate outside [0,1]" });
        }
        if x_min >= x_max {
            return Err(CoreError::InvalidBox { coords, reason: "x_min must be < x_max" });
        }
        if y_min >= y_max {
            return Err(CoreError::InvalidBox { coords, reason: "y_min must be < y_max" });
        }
        Ok(BBox { x_min, y_min, x_max, y_max })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = CoreError;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Class identifier from a task's closed vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub label: ClassId,
}

impl LabeledBox {
    pub fn new(bbox: BBox, label: ClassId) -> Self {
        LabeledBox { bbox, label }
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// REC accuracy reward: the raw IoU between the predicted and reference box.
pub fn rec_accuracy_reward(predicted: &BBox, gt: &BBox) -> f64 {
    iou(predicted, gt)
}

/// Threshold used for the reward-side mAP.
pub const OVD_REWARD_IOU: f64 = 0.5;

/// Redundancy factor `min(1, N_gt / N_pred)`; 1 when nothing was predicted.
pub fn redundancy_factor(n_gt: usize, n_pred: usize) -> f64 {
    if n_pred == 0 {
        1.0
    } else {
        (n_gt as f64 / n_pred as f64).min(1.0)
    }
}

/// OVD accuracy reward: redundancy factor times mAP@0.5 on a single image.
///
/// Predictions carry no confidence, so they are ranked in emission order.
pub fn ovd_accuracy_reward(predictions: &[LabeledBox], gts: &[LabeledBox]) -> Result<f64> {
    if gts.is_empty() {
        return Err(CoreError::contract("ovd reward needs at least one ground-truth box"));
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let image = ImageDetections {
        image_id: "ovd".into(),
        preds: predictions.iter().map(|p| ScoredBox { det: *p, score: 1.0 }).collect(),
        gts: gts.to_vec(),
    };
    let map = mean_average_precision(&DetectionSet::new(vec![image])?, &[OVD_REWARD_IOU])?;
    Ok(redundancy_factor(gts.len(), predictions.len()) * map)
}

/// 1 when the response parsed with all required sections, else 0.
///
/// The parser already enforces the diversity range, so any `Ok` is well formed.
pub fn format_reward(parsed: &std::result::Result<ParsedResponse, ParseError>) -> f64 {
    match parsed {
        Ok(p) if p.diversity.is_none_or(|v| (0.0..=1.0).contains(&v)) => 1.0,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub accuracy: f64,
    pub format: f64,
    pub diversity: f64,
    pub total: f64,
}

/// Final per-response reward: the plain sum of the three components.
pub fn total_reward(accuracy: f64, format: f64, diversity: f64) -> Result<RewardBreakdown> {
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(CoreError::contract(format!("accuracy reward {accuracy} outside [0,1]")));
    }
    if format != 0.0 && format != 1.0 {
        return Err(CoreError::contract(format!("format reward {format} not in {{0,1}}")));
    }
    if !(0.0..=1.0).contains(&diversity) {
        return Err(CoreError::contract(format!("diversity reward {diversity} outside [0,1]")));
    }
    Ok(RewardBreakdown { accuracy, format, diversity, total: accuracy + format + diversity })
}
