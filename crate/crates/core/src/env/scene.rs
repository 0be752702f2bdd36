//! Scene records, sampling and the difficulty score.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EnvConfig;
use crate::error::{CoreError, Result};
use crate::geometry::{iou, BBox, ClassId};

/// Distractors may not overlap the target box above this IoU.
pub const MAX_DISTRACTOR_IOU: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub label: ClassId,
    pub attributes: Vec<u8>,
    /// Index of the anchor the object sits on.
    pub anchor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClutterConfig {
    pub distractor_bucket: u8,
    pub similarity: f64,
    pub layout: u8,
    pub palette: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub parent: Option<String>,
    /// Regenerations since the root scene.
    pub epoch: u32,
    pub seed: u64,
    /// Set when a directive asked for more distractors than fit.
    #[serde(default)]
    pub clamped: bool,
}

/// A synthetic stand-in for an image with one referred object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub target: SceneObject,
    pub anchors: Vec<BBox>,
    pub distractors: Vec<SceneObject>,
    pub clutter_config: ClutterConfig,
    pub generation: Lineage,
}

/// A scene invariant broken at `field`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl Scene {
    /// The referring expression: the target's attribute tuple.
    pub fn referring(&self) -> &[u8] {
        &self.target.attributes
    }

    /// Object at anchor `a`, if any.
    pub fn object_at(&self, a: usize) -> Option<&SceneObject> {
        if self.target.anchor == a {
            return Some(&self.target);
        }
        self.distractors.iter().find(|d| d.anchor == a)
    }

    pub fn objects(&self) -> impl Iterator<Item = &SceneObject> {
        std::iter::once(&self.target).chain(self.distractors.iter())
    }

    /// Checks structural invariants; boxes are already valid by construction.
    pub fn validate(&self) -> std::result::Result<(), FieldError> {
        let err = |field: String, message: &str| Err(FieldError { field, message: message.into() });
        if self.anchors.len() < 2 {
            return err("anchors".into(), "need at least 2 anchors");
        }
        let k = self.target.attributes.len();
        if k == 0 {
            return err("target.attributes".into(), "empty attribute tuple");
        }
        if self.target.anchor >= self.anchors.len() {
            return err("target.anchor".into(), "anchor index out of range");
        }
        if self.anchors[self.target.anchor] != self.target.bbox {
            return err("target.box".into(), "target box must equal its anchor");
        }
        if !(0.0..=1.0).contains(&self.clutter_config.similarity) {
            return err("clutter_config.similarity".into(), "similarity outside [0,1]");
        }
        let mut used = vec![false; self.anchors.len()];
        used[self.target.anchor] = true;
        for (i, d) in self.distractors.iter().enumerate() {
            let path = |f: &str| format!("distractors[{i}].{f}");
            if d.anchor >= self.anchors.len() {
                return err(path("anchor"), "anchor index out of range");
            }
            if used[d.anchor] {
                return err(path("anchor"), "anchor already occupied");
            }
            used[d.anchor] = true;
            if self.anchors[d.anchor] != d.bbox {
                return err(path("box"), "distractor box must equal its anchor");
            }
            if iou(&d.bbox, &self.target.bbox) > MAX_DISTRACTOR_IOU {
                return err(path("box"), "distractor overlaps the target above IoU 0.3");
            }
            if d.attributes.len() != k {
                return err(path("attributes"), "attribute tuple length differs from target");
            }
        }
        Ok(())
    }

    /// True when `child` keeps this scene's target bit-for-bit.
    pub fn same_foreground(&self, child: &Scene) -> bool {
        self.target == child.target && self.anchors[self.target.anchor] == child.anchors[child.target.anchor]
    }
}

/// Distractor count weighted by how closely they resemble the target:
/// `n * (1 + similarity)`. Zero for an uncluttered scene.
pub fn difficulty_score(scene: &Scene) -> f64 {
    scene.distractors.len() as f64 * (1.0 + scene.clutter_config.similarity)
}

pub(crate) fn stable_hash(parts: &[&[u8]]) -> u64 {
    // FNV-1a; stable across builds, unlike the std hasher
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for b in part.iter().chain(std::iter::once(&0xffu8)) {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn grid_anchors(cfg: &EnvConfig, rng: &mut ChaCha8Rng) -> Vec<BBox> {
    let mut cells: Vec<usize> = (0..cfg.grid_cols * cfg.grid_rows).collect();
    cells.shuffle(rng);
    let (cw, ch) = (1.0 / cfg.grid_cols as f64, 1.0 / cfg.grid_rows as f64);
    cells
        .into_iter()
        .take(cfg.anchors - cfg.jittered)
        .map(|c| {
            let (col, row) = ((c % cfg.grid_cols) as f64, (c / cfg.grid_cols) as f64);
            let mut m = || rng.random_range(0.08..0.22);
            let (l, r, t, b) = (m() * cw, m() * cw, m() * ch, m() * ch);
            BBox::new(col * cw + l, row * ch + t, (col + 1.0) * cw - r, (row + 1.0) * ch - b)
                .expect("cell shrink keeps a valid box")
        })
        .collect()
}

fn jitter(src: &BBox, rng: &mut ChaCha8Rng) -> BBox {
    let frac = rng.random_range(0.25..0.45);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let (mut dx, mut dy) = (0.0, 0.0);
    if rng.random_bool(0.5) {
        dx = sign * frac * src.width();
    } else {
        dy = sign * frac * src.height();
    }
    // keep inside the unit square by reflecting the shift
    if src.x_min() + dx < 0.0 || src.x_max() + dx > 1.0 {
        dx = -dx;
    }
    if src.y_min() + dy < 0.0 || src.y_max() + dy > 1.0 {
        dy = -dy;
    }
    BBox::new(src.x_min() + dx, src.y_min() + dy, src.x_max() + dx, src.y_max() + dy)
        .expect("reflected shift stays in the unit square")
}

/// Places up to `requested` distractors; returns them and whether the request
/// was clamped to capacity.
pub(crate) fn place_distractors(
    anchors: &[BBox],
    grid_count: usize,
    target: &SceneObject,
    requested: usize,
    clutter: &ClutterConfig,
    attribute_values: u8,
    rng: &mut ChaCha8Rng,
) -> (Vec<SceneObject>, bool) {
    let mut eligible: Vec<usize> = (0..grid_count)
        .filter(|&a| a != target.anchor && iou(&anchors[a], &target.bbox) <= MAX_DISTRACTOR_IOU)
        .collect();
    let (tx, ty) = target.bbox.center();
    let dist = |a: usize| {
        let (x, y) = anchors[a].center();
        (x - tx).hypot(y - ty)
    };
    match clutter.layout % 4 {
        0 => eligible.sort_by(|a, b| dist(*a).total_cmp(&dist(*b))),
        1 => eligible.sort_by(|a, b| dist(*b).total_cmp(&dist(*a))),
        2 => eligible.shuffle(rng),
        _ => {}
    }
    let clamped = requested > eligible.len();
    let k = target.attributes.len();
    let v = attribute_values;
    let max_shared = k.saturating_sub(1);
    let distractors = eligible
        .into_iter()
        .take(requested)
        .map(|a| {
            let u: f64 = rng.random();
            let shared = ((clutter.similarity * max_shared as f64 + u).floor() as usize).min(max_shared);
            let mut slots: Vec<usize> = (0..k).collect();
            slots.shuffle(rng);
            let mut attributes = target.attributes.clone();
            for &s in &slots[shared..] {
                let offset = 1 + (clutter.palette as u32 + rng.random_range(0..(v as u32 - 1))) % (v as u32 - 1);
                attributes[s] = ((target.attributes[s] as u32 + offset) % v as u32) as u8;
            }
            SceneObject { bbox: anchors[a], label: ClassId(attributes[0] as u32), attributes, anchor: a }
        })
        .collect();
    (distractors, clamped)
}

/// Deterministic scene for `(cfg, seed)`.
pub fn sample_scene(cfg: &EnvConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut anchors = grid_anchors(cfg, &mut rng);
    let grid_count = anchors.len();
    for _ in 0..cfg.jittered {
        let src = anchors[rng.random_range(0..grid_count)];
        anchors.push(jitter(&src, &mut rng));
    }
    let target_anchor = rng.random_range(0..cfg.anchors);
    let attributes: Vec<u8> = (0..cfg.attributes).map(|_| rng.random_range(0..cfg.attribute_values)).collect();
    let target = SceneObject {
        bbox: anchors[target_anchor],
        label: ClassId(attributes[0] as u32),
        attributes,
        anchor: target_anchor,
    };
    let clutter = ClutterConfig {
        distractor_bucket: rng.random_range(cfg.bucket_range.0..=cfg.bucket_range.1),
        similarity: rng.random_range(cfg.similarity_range.0..=cfg.similarity_range.1),
        layout: rng.random_range(0..4),
        palette: rng.random_range(0..4),
    };
    let requested = cfg.bucket_counts[clutter.distractor_bucket as usize];
    let (distractors, clamped) =
        place_distractors(&anchors, grid_count, &target, requested, &clutter, cfg.attribute_values, &mut rng);
    let scene = Scene {
        id: format!("root-{seed:016x}"),
        target,
        anchors,
        distractors,
        clutter_config: clutter,
        generation: Lineage { parent: None, epoch: 0, seed, clamped },
    };
    debug_assert!(scene.validate().is_ok());
    Ok(scene)
}

/// Number of leading anchors that come from the grid (the rest are jittered).
pub(crate) fn grid_anchor_count(scene: &Scene, cfg: &EnvConfig) -> Result<usize> {
    if scene.anchors.len() != cfg.anchors {
        return Err(CoreError::contract(format!(
            "scene has {} anchors, config expects {}",
            scene.anchors.len(),
            cfg.anchors
        )));
    }
    Ok(cfg.anchors - cfg.jittered)
}
