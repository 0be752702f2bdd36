//! Detection metrics: greedy precision/recall, all-point AP, mAP and
//! accuracy at an IoU threshold.
//!
//! Ranking ties (equal confidence) keep insertion order: image order first,
//! then prediction order inside the image.

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::exec::Exec;
use crate::geometry::{iou, BBox, ClassId, LabeledBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(flatten)]
    pub det: LabeledBox,
    pub score: f64,
}

/// One detection record: predictions and ground truth for a single image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub image_id: String,
    pub preds: Vec<ScoredBox>,
    pub gts: Vec<LabeledBox>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    images: Vec<ImageDetections>,
}

impl DetectionSet {
    /// Image ids must be unique and scores must lie in `[0,1]`.
    pub fn new(images: Vec<ImageDetections>) -> Result<Self> {
        let mut seen = HashSet::new();
        for img in &images {
            if !seen.insert(img.image_id.as_str()) {
                return Err(CoreError::contract(format!("duplicate image id {}", img.image_id)));
            }
            if let Some(p) = img.preds.iter().find(|p| !(0.0..=1.0).contains(&p.score)) {
                return Err(CoreError::contract(format!(
                    "score {} outside [0,1] in image {}",
                    p.score, img.image_id
                )));
            }
        }
        Ok(DetectionSet { images })
    }

    pub fn images(&self) -> &[ImageDetections] {
        &self.images
    }

    /// Classes that have at least one ground-truth box, ascending.
    pub fn gt_classes(&self) -> Vec<ClassId> {
        let set: BTreeSet<ClassId> =
            self.images.iter().flat_map(|i| i.gts.iter().map(|g| g.label)).collect();
        set.into_iter().collect()
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut images = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line)
                .map_err(|source| CoreError::Record { line: i + 1, source })?;
            images.push(rec);
        }
        DetectionSet::new(images)
    }

    pub fn write_jsonl(&self, mut writer: impl Write) -> Result<()> {
        for img in &self.images {
            serde_json::to_writer(&mut writer, img)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// `(prediction index, gt index, iou)`, in acceptance order.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

/// One-to-one greedy matching: candidate pairs with equal labels and
/// `iou >= threshold` are visited by descending IoU, then ascending
/// `(pred, gt)` index, and accepted when both sides are still free.
pub fn greedy_match(preds: &[LabeledBox], gts: &[LabeledBox], iou_threshold: f64) -> Result<MatchResult> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(CoreError::contract(format!("iou threshold {iou_threshold} not in (0,1]")));
    }
    let mut candidates = Vec::new();
    for (p, pred) in preds.iter().enumerate() {
        for (g, gt) in gts.iter().enumerate() {
            if pred.label != gt.label {
                continue;
            }
            let v = iou(&pred.bbox, &gt.bbox);
            if v >= iou_threshold {
                candidates.push((p, g, v));
            }
        }
    }
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for (p, g, v) in candidates {
        if !pred_used[p] && !gt_used[g] {
            pred_used[p] = true;
            gt_used[g] = true;
            pairs.push((p, g, v));
        }
    }
    Ok(MatchResult {
        pairs,
        unmatched_preds: (0..preds.len()).filter(|&i| !pred_used[i]).collect(),
        unmatched_gts: (0..gts.len()).filter(|&i| !gt_used[i]).collect(),
    })
}

/// Matched, predicted and ground-truth counts summed over all images.
pub fn greedy_counts(ds: &DetectionSet, thr: f64, exec: Exec) -> Result<(usize, usize, usize)> {
    let per_image = exec.map(ds.images(), |_, img| {
        let preds: Vec<LabeledBox> = img.preds.iter().map(|p| p.det).collect();
        greedy_match(&preds, &img.gts, thr).map(|m| (m.pairs.len(), preds.len(), img.gts.len()))
    });
    per_image.into_iter().try_fold((0, 0, 0), |acc, r| {
        let (m, p, g) = r?;
        Ok((acc.0 + m, acc.1 + p, acc.2 + g))
    })
}

/// Fraction of predictions matched to some ground truth; 0 with no predictions.
pub fn greedy_precision(ds: &DetectionSet, thr: f64) -> Result<f64> {
    let (m, p, _) = greedy_counts(ds, thr, Exec::default())?;
    Ok(if p == 0 { 0.0 } else { m as f64 / p as f64 })
}

/// Fraction of ground truths matched by some prediction; 0 with no ground truth.
pub fn greedy_recall(ds: &DetectionSet, thr: f64) -> Result<f64> {
    let (m, _, g) = greedy_counts(ds, thr, Exec::default())?;
    Ok(if g == 0 { 0.0 } else { m as f64 / g as f64 })
}

/// Area under the all-point interpolated precision/recall curve for `class`.
///
/// Returns `None` when the class has no ground truth anywhere.
pub fn average_precision(ds: &DetectionSet, class: ClassId, iou_threshold: f64) -> Result<Option<f64>> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(CoreError::contract(format!("iou threshold {iou_threshold} not in (0,1]")));
    }
    let n_gt: usize =
        ds.images().iter().map(|img| img.gts.iter().filter(|g| g.label == class).count()).sum();
    if n_gt == 0 {
        return Ok(None);
    }

    // (image, pred) in insertion order; the stable sort keeps it for ties.
    let mut ranked: Vec<(usize, &ScoredBox)> = ds
        .images()
        .iter()
        .enumerate()
        .flat_map(|(i, img)| img.preds.iter().filter(|p| p.det.label == class).map(move |p| (i, p)))
        .collect();
    ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));

    let mut used: Vec<Vec<bool>> = ds.images().iter().map(|img| vec![false; img.gts.len()]).collect();
    let mut hits = Vec::with_capacity(ranked.len());
    for (img_idx, pred) in &ranked {
        let gts = &ds.images()[*img_idx].gts;
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt.label != class || used[*img_idx][g] {
                continue;
            }
            let v = iou(&pred.det.bbox, &gt.bbox);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            used[*img_idx][g] = true;
        }
        hits.push(best.is_some());
    }

    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (rank, &hit) in hits.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    // precision envelope, scanned from the lowest-ranked prediction upward
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let sum: f64 = hits.iter().zip(&precision).filter(|(h, _)| **h).map(|(_, p)| *p).sum();
    Ok(Some(sum / n_gt as f64))
}

/// Mean of AP over every (threshold, class) pair, threshold-major and classes
/// ascending. Classes without ground truth are excluded; 0 when none remain.
pub fn mean_average_precision(ds: &DetectionSet, thresholds: &[f64]) -> Result<f64> {
    mean_average_precision_with(ds, thresholds, Exec::Sequential)
}

/// [`mean_average_precision`] with the per-pair AP sweeps mapped by `exec`.
/// The sum runs in the same order either way.
pub fn mean_average_precision_with(ds: &DetectionSet, thresholds: &[f64], exec: Exec) -> Result<f64> {
    if thresholds.is_empty() {
        return Err(CoreError::contract("mAP needs at least one IoU threshold"));
    }
    let classes = ds.gt_classes();
    if classes.is_empty() {
        return Ok(0.0);
    }
    let pairs: Vec<(f64, ClassId)> =
        thresholds.iter().flat_map(|&t| classes.iter().map(move |&c| (t, c))).collect();
    let aps = exec.map(&pairs, |_, &(t, c)| average_precision(ds, c, t));
    let mut values = Vec::with_capacity(pairs.len());
    for ap in aps {
        if let Some(v) = ap? {
            values.push(v);
        }
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Fraction of index-aligned pairs with IoU strictly above `thr`.
pub fn accuracy_at_iou(preds: &[BBox], gts: &[BBox], thr: f64) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(CoreError::contract(format!(
            "{} predictions for {} ground-truth boxes",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds.iter().zip(gts).filter(|(p, g)| iou(p, g) > thr).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Summary reported by evaluation tooling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub map_50: f64,
    pub map_50_95: f64,
    pub gp_50: f64,
    pub gr_50: f64,
}

pub fn summarize(ds: &DetectionSet) -> Result<DetectionSummary> {
    Ok(DetectionSummary {
        map_50: mean_average_precision(ds, &[0.5])?,
        map_50_95: mean_average_precision(ds, &coco_thresholds())?,
        gp_50: greedy_precision(ds, 0.5)?,
        gr_50: greedy_recall(ds, 0.5)?,
    })
}
