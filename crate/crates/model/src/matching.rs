//! Matching costs and tracklet-aware label assignment.

use std::collections::{BTreeMap, BTreeSet};

use querytrack_autograd::sigmoid_f64;
use querytrack_core::geometry::{giou, BoundingBox};
use querytrack_core::{hungarian, CostMatrix, MatchResult};

use crate::config::LossConfig;
use crate::error::{ModelError, Result};
use crate::queries::{QueryKind, QueryMeta};

const LOG_EPS: f64 = 1e-8;

/// One annotated object of a frame, box `(cx, cy, w, h)` normalized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtObject {
    pub identity: u32,
    pub bbox: [f64; 4],
}

pub fn cxcywh_to_xyxy(b: [f64; 4]) -> [f64; 4] {
    [b[0] - b[2] / 2.0, b[1] - b[3] / 2.0, b[0] + b[2] / 2.0, b[1] + b[3] / 2.0]
}

/// Focal-style classification cost of calling a query with foreground
/// probability `p` a match: positive focal term minus negative focal term.
pub fn focal_cost(p: f64, alpha: f64, gamma: f64) -> f64 {
    let pos = alpha * (1.0 - p).powf(gamma) * -(p + LOG_EPS).ln();
    let neg = (1.0 - alpha) * p.powf(gamma) * -(1.0 - p + LOG_EPS).ln();
    pos - neg
}

pub fn pair_cost(logit: f64, pred: [f64; 4], gt: [f64; 4], cfg: &LossConfig) -> f64 {
    let cls = focal_cost(sigmoid_f64(logit), cfg.focal_alpha, cfg.focal_gamma);
    let l1: f64 = pred.iter().zip(&gt).map(|(a, b)| (a - b).abs()).sum();
    let g = giou(&cxcywh_to_xyxy(pred), &cxcywh_to_xyxy(gt));
    cfg.cls_weight * cls + cfg.l1_weight * l1 + cfg.giou_weight * (1.0 - g)
}

/// `cost[i][j]` between prediction `i` and ground truth `j`.
pub fn detection_cost(logits: &[f64], boxes: &[[f64; 4]], gts: &[[f64; 4]], cfg: &LossConfig) -> CostMatrix {
    CostMatrix::from_fn(logits.len(), gts.len(), |i, j| pair_cost(logits[i], boxes[i], gts[j], cfg))
}

/// Plain Hungarian matching of every prediction against every ground truth.
pub fn match_detections(logits: &[f64], boxes: &[[f64; 4]], gts: &[[f64; 4]], cfg: &LossConfig) -> Result<MatchResult> {
    Ok(hungarian(&detection_cost(logits, boxes, gts, cfg))?)
}

/// Tracklet-aware assignment.
///
/// Track queries are bound to the ground truth carrying the identity they
/// were promoted for (`live`: track identity → ground-truth identity) and
/// stay unmatched when it is absent. Ground truths without a live track are
/// newborn and are Hungarian-matched against the detect queries only.
pub fn tala_assign(
    meta: &[QueryMeta],
    logits: &[f64],
    boxes: &[[f64; 4]],
    gts: &[GtObject],
    live: &BTreeMap<u32, u32>,
    cfg: &LossConfig,
) -> Result<MatchResult> {
    let mut pairs = Vec::new();
    let mut claimed = BTreeSet::new();
    for (i, m) in meta.iter().enumerate() {
        if m.kind != QueryKind::Track {
            continue;
        }
        let track_id = m.identity.ok_or_else(|| ModelError::Invariant("track query without identity".into()))?;
        let gt_id = *live
            .get(&track_id)
            .ok_or_else(|| ModelError::Invariant(format!("track {track_id} has no ground-truth binding")))?;
        if !claimed.insert(gt_id) {
            return Err(ModelError::Invariant(format!(
                "two track queries claim ground-truth identity {gt_id}"
            )));
        }
        if let Some(j) = gts.iter().position(|g| g.identity == gt_id) {
            pairs.push((i, j));
        }
    }
    let detect: Vec<usize> = (0..meta.len()).filter(|&i| meta[i].kind == QueryKind::Detect).collect();
    let newborn: Vec<usize> = (0..gts.len()).filter(|&j| !claimed.contains(&gts[j].identity)).collect();
    if !detect.is_empty() && !newborn.is_empty() {
        let cost = CostMatrix::from_fn(detect.len(), newborn.len(), |a, b| {
            let i = detect[a];
            pair_cost(logits[i], boxes[i], gts[newborn[b]].bbox, cfg)
        });
        for (a, b) in hungarian(&cost)?.pairs {
            pairs.push((detect[a], newborn[b]));
        }
    }
    Ok(MatchResult::from_pairs(pairs, meta.len(), gts.len()))
}

/// Normalized box of a tracker output.
pub fn to_bounding_box(b: [f64; 4]) -> Option<BoundingBox> {
    BoundingBox::new(b[0], b[1], b[2], b[3]).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lc() -> LossConfig {
        LossConfig::default()
    }

    #[test]
    fn perfect_prediction_hits_box_minima() {
        let b = [0.5, 0.5, 0.2, 0.3];
        let c = pair_cost(10.0, b, b, &lc());
        let cls_only = 2.0 * focal_cost(sigmoid_f64(10.0), 0.25, 2.0);
        assert!((c - cls_only).abs() < 1e-12);
    }

    #[test]
    fn exact_prediction_wins() {
        let gt = [0.3, 0.3, 0.1, 0.1];
        let m = match_detections(&[0.0, 0.0], &[gt, [0.7, 0.7, 0.1, 0.1]], &[gt], &lc()).unwrap();
        assert_eq!(m.pairs, vec![(0, 0)]);
    }

    #[test]
    fn cost_matches_scalar_recomputation() {
        let logits = [0.3, -1.0, 2.0];
        let boxes = [[0.2, 0.3, 0.1, 0.2], [0.6, 0.5, 0.3, 0.3], [0.5, 0.8, 0.2, 0.1]];
        let gts = [[0.25, 0.3, 0.1, 0.2], [0.6, 0.6, 0.2, 0.2], [0.1, 0.1, 0.05, 0.05]];
        let c = detection_cost(&logits, &boxes, &gts, &lc());
        for i in 0..3 {
            for j in 0..3 {
                let p = 1.0 / (1.0 + (-logits[i]).exp());
                let pos = 0.25 * (1.0 - p) * (1.0 - p) * -(p + 1e-8).ln();
                let neg = 0.75 * p * p * -(1.0 - p + 1e-8).ln();
                let l1: f64 = (0..4).map(|k| (boxes[i][k] - gts[j][k]).abs()).sum();
                let g = giou(&cxcywh_to_xyxy(boxes[i]), &cxcywh_to_xyxy(gts[j]));
                let expect = 2.0 * (pos - neg) + 5.0 * l1 + 2.0 * (1.0 - g);
                assert!((c.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    fn gt(id: u32, x: f64) -> GtObject {
        GtObject { identity: id, bbox: [x, 0.5, 0.1, 0.1] }
    }

    #[test]
    fn tracked_ground_truth_leaves_detects_unmatched() {
        let meta = [QueryMeta::track(1, 0), QueryMeta::track(2, 0), QueryMeta::detect(), QueryMeta::detect()];
        let live = BTreeMap::from([(1, 10), (2, 20)]);
        let gts = [gt(20, 0.2), gt(10, 0.6)];
        let boxes = [[0.5, 0.5, 0.1, 0.1]; 4];
        let m = tala_assign(&meta, &[0.0; 4], &boxes, &gts, &live, &lc()).unwrap();
        assert_eq!(m.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(m.unmatched_rows, vec![2, 3]);
    }

    #[test]
    fn disappeared_ground_truth_leaves_track_unmatched() {
        let meta = [QueryMeta::track(1, 0), QueryMeta::detect()];
        let live = BTreeMap::from([(1, 10)]);
        let m = tala_assign(&meta, &[0.0; 2], &[[0.5, 0.5, 0.1, 0.1]; 2], &[], &live, &lc()).unwrap();
        assert!(m.pairs.is_empty());
    }

    #[test]
    fn newborn_goes_to_cheapest_detect() {
        let meta = [
            QueryMeta::track(1, 0),
            QueryMeta::track(2, 0),
            QueryMeta::detect(),
            QueryMeta::detect(),
            QueryMeta::detect(),
        ];
        let live = BTreeMap::from([(1, 10), (2, 20)]);
        let gts = [gt(10, 0.1), gt(20, 0.3), gt(30, 0.7)];
        let boxes = [
            [0.1, 0.5, 0.1, 0.1],
            [0.3, 0.5, 0.1, 0.1],
            [0.2, 0.5, 0.1, 0.1],
            [0.68, 0.5, 0.1, 0.1],
            [0.9, 0.5, 0.1, 0.1],
        ];
        let logits = [0.0; 5];
        let m = tala_assign(&meta, &logits, &boxes, &gts, &live, &lc()).unwrap();
        // enumerate the three candidates for the newborn
        let best = (2..5)
            .min_by(|&a, &b| pair_cost(logits[a], boxes[a], gts[2].bbox, &lc()).total_cmp(&pair_cost(logits[b], boxes[b], gts[2].bbox, &lc())))
            .unwrap();
        assert_eq!(m.pairs, vec![(0, 0), (1, 1), (best, 2)]);
        assert_eq!(best, 3);
    }

    #[test]
    fn double_claim_is_invariant_violation() {
        let meta = [QueryMeta::track(1, 0), QueryMeta::track(2, 0)];
        let live = BTreeMap::from([(1, 10), (2, 10)]);
        let r = tala_assign(&meta, &[0.0; 2], &[[0.5; 4]; 2], &[gt(10, 0.5)], &live, &lc());
        assert!(matches!(r, Err(ModelError::Invariant(_))));
    }
}
