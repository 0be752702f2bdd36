//! Feature extraction from a scene to the policy's observation.
//!
//! Anchor row layout for K attributes (width K + 6):
//!
//! | index      | meaning                                              |
//! |------------|------------------------------------------------------|
//! | 0          | anchor holds an object                               |
//! | 1..=K      | object's attribute k equals the referring attribute  |
//! | K+1        | fraction of matching attributes                      |
//! | K+2        | other objects within 0.35 of the anchor centre / (A-1) |
//! | K+3, K+4   | anchor centre x, y                                   |
//! | K+5        | max IoU with an object not sitting on this anchor    |
//!
//! Context: `[1, objects / A, mean match fraction of objects, share of anchors
//! whose match fraction is at least (K-1)/K]`.

use super::scene::Scene;
use super::CONTEXT_DIM;
use crate::geometry::iou;
use crate::policy::Observation;

pub const DENSITY_RADIUS: f64 = 0.35;

pub fn feature_dim(attributes: usize) -> usize {
    attributes + 6
}

/// Index of the match-fraction column.
pub fn match_fraction_index(attributes: usize) -> usize {
    attributes + 1
}

pub fn scene_features(scene: &Scene) -> Observation {
    let k = scene.referring().len();
    let a_count = scene.anchors.len();
    let objects: Vec<_> = scene.objects().collect();
    let mut anchors = Vec::with_capacity(a_count);
    let mut occupied_match = Vec::new();
    let near_threshold = (k.saturating_sub(1)) as f64 / k as f64;
    let mut near_count = 0usize;

    for (a, abox) in scene.anchors.iter().enumerate() {
        let mut row = vec![0.0; feature_dim(k)];
        let (cx, cy) = abox.center();
        if let Some(obj) = scene.object_at(a) {
            row[0] = 1.0;
            let mut matches = 0usize;
            for (i, (x, y)) in obj.attributes.iter().zip(scene.referring()).enumerate() {
                if x == y {
                    row[1 + i] = 1.0;
                    matches += 1;
                }
            }
            let frac = matches as f64 / k as f64;
            row[k + 1] = frac;
            occupied_match.push(frac);
            if frac >= near_threshold {
                near_count += 1;
            }
        }
        let near = objects
            .iter()
            .filter(|o| o.anchor != a)
            .filter(|o| {
                let (ox, oy) = o.bbox.center();
                (ox - cx).hypot(oy - cy) <= DENSITY_RADIUS
            })
            .count();
        row[k + 2] = near as f64 / (a_count - 1).max(1) as f64;
        row[k + 3] = cx;
        row[k + 4] = cy;
        row[k + 5] = objects.iter().filter(|o| o.anchor != a).map(|o| iou(abox, &o.bbox)).fold(0.0, f64::max);
        anchors.push(row);
    }

    let mean_match = occupied_match.iter().sum::<f64>() / occupied_match.len().max(1) as f64;
    let context = vec![
        1.0,
        objects.len() as f64 / a_count as f64,
        mean_match,
        near_count as f64 / a_count as f64,
    ];
    debug_assert_eq!(context.len(), CONTEXT_DIM);
    Observation { anchors, context }
}
