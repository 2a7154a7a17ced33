//! Detection losses with deep supervision and clip-level averaging.

use querytrack_autograd::{sigmoid_f64, Graph, Tensor, Var};
use querytrack_core::geometry::giou;
use querytrack_core::MatchResult;

use crate::config::LossConfig;
use crate::decoder::DecoderOutput;
use crate::error::{ModelError, Result};
use crate::matching::cxcywh_to_xyxy;

/// Loss components of one frame, summed over decoder layers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
    /// `λ_cls·cls + λ_l1·l1 + λ_giou·giou`, not yet normalized.
    pub total: f64,
    /// Ground truths in the frame.
    pub v: usize,
}

impl LossBreakdown {
    pub fn normalized(&self) -> f64 {
        self.total / self.v.max(1) as f64
    }
}

/// Differentiable total of one frame together with its breakdown.
#[derive(Clone, Copy, Debug)]
pub struct FrameLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Scalar sigmoid focal loss of one logit.
pub fn focal_loss_scalar(logit: f64, target: f64, alpha: f64, gamma: f64) -> f64 {
    let p = sigmoid_f64(logit);
    let ce = softplus(logit) - target * logit;
    let p_t = p * target + (1.0 - p) * (1.0 - target);
    let a_t = alpha * target + (1.0 - alpha) * (1.0 - target);
    a_t * (1.0 - p_t).powf(gamma) * ce
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Summed focal loss of `[Q]` logits against 0/1 targets.
pub fn focal_loss(g: &mut Graph, logits: Var, targets: &[f64], alpha: f64, gamma: f64) -> Var {
    let n = targets.len();
    let t = g.constant(Tensor::from_vec(&[n], targets.to_vec()));
    let flip = g.constant(Tensor::from_vec(&[n], targets.iter().map(|t| 1.0 - 2.0 * t).collect()));
    let a_t = g.constant(Tensor::from_vec(
        &[n],
        targets.iter().map(|t| alpha * t + (1.0 - alpha) * (1.0 - t)).collect(),
    ));
    let p = g.sigmoid(logits);
    // 1 - p_t = p (1 - 2t) + t
    let pf = g.mul(p, flip);
    let one_minus_pt = g.add(pf, t);
    let modulating = g.powf(one_minus_pt, gamma);
    let sp = g.softplus(logits);
    let tx = g.mul(logits, t);
    let ce = g.sub(sp, tx);
    let w = g.mul(a_t, modulating);
    let l = g.mul(w, ce);
    g.sum_all(l)
}

fn column(g: &mut Graph, x: Var, c: usize) -> Var {
    g.narrow(x, 1, c, 1)
}

/// Corner columns `(x1, y1, x2, y2)` of `[M, 4]` center-format boxes.
fn corners(g: &mut Graph, b: Var) -> [Var; 4] {
    let cx = column(g, b, 0);
    let cy = column(g, b, 1);
    let w = column(g, b, 2);
    let h = column(g, b, 3);
    let hw = g.scale(w, 0.5);
    let hh = g.scale(h, 0.5);
    [g.sub(cx, hw), g.sub(cy, hh), g.add(cx, hw), g.add(cy, hh)]
}

/// Summed `1 - giou` over rows of two `[M, 4]` center-format box sets.
pub fn giou_loss(g: &mut Graph, pred: Var, target: Var) -> Var {
    let [ax1, ay1, ax2, ay2] = corners(g, pred);
    let [bx1, by1, bx2, by2] = corners(g, target);
    let aw = g.sub(ax2, ax1);
    let ah = g.sub(ay2, ay1);
    let area_a = g.mul(aw, ah);
    let bw = g.sub(bx2, bx1);
    let bh = g.sub(by2, by1);
    let area_b = g.mul(bw, bh);
    let ix1 = g.maximum(ax1, bx1);
    let iy1 = g.maximum(ay1, by1);
    let ix2 = g.minimum(ax2, bx2);
    let iy2 = g.minimum(ay2, by2);
    let iw = g.sub(ix2, ix1);
    let iw = g.relu(iw);
    let ih = g.sub(iy2, iy1);
    let ih = g.relu(ih);
    let inter = g.mul(iw, ih);
    let sum = g.add(area_a, area_b);
    let union = g.sub(sum, inter);
    let ex1 = g.minimum(ax1, bx1);
    let ey1 = g.minimum(ay1, by1);
    let ex2 = g.maximum(ax2, bx2);
    let ey2 = g.maximum(ay2, by2);
    let ew = g.sub(ex2, ex1);
    let eh = g.sub(ey2, ey1);
    let enclosing = g.mul(ew, eh);
    let iou = g.div(inter, union);
    let gap = g.sub(enclosing, union);
    let penalty = g.div(gap, enclosing);
    let gi = g.sub(iou, penalty);
    let loss = g.neg(gi);
    let loss = g.add_scalar(loss, 1.0);
    g.sum_all(loss)
}

fn targets(m: &MatchResult, q: usize) -> Vec<f64> {
    let mut t = vec![0.0; q];
    for &(i, _) in &m.pairs {
        t[i] = 1.0;
    }
    t
}

/// Weighted detection loss of one frame, every decoder layer supervised by
/// the same match. `gts` are `(cx, cy, w, h)` normalized boxes.
pub fn frame_loss(
    g: &mut Graph,
    out: &DecoderOutput,
    m: &MatchResult,
    gts: &[[f64; 4]],
    cfg: &LossConfig,
) -> Result<FrameLoss> {
    let q = out.logits.first().map(|&l| g.shape(l)[0]).unwrap_or(0);
    for &(i, j) in &m.pairs {
        if i >= q || j >= gts.len() {
            return Err(ModelError::Invariant(format!("match pair ({i}, {j}) out of range")));
        }
    }
    let t = targets(m, q);
    let rows: Vec<usize> = m.pairs.iter().map(|p| p.0).collect();
    let gt_flat: Vec<f64> = m.pairs.iter().flat_map(|p| gts[p.1]).collect();
    let mut cls_terms = Vec::new();
    let mut l1_terms = Vec::new();
    let mut giou_terms = Vec::new();
    for (&logits, &boxes) in out.logits.iter().zip(&out.boxes) {
        cls_terms.push(focal_loss(g, logits, &t, cfg.focal_alpha, cfg.focal_gamma));
        if !rows.is_empty() {
            let pred = g.select_rows(boxes, &rows);
            let target = g.constant(Tensor::from_vec(&[rows.len(), 4], gt_flat.clone()));
            let diff = g.sub(pred, target);
            let abs = g.abs(diff);
            l1_terms.push(g.sum_all(abs));
            giou_terms.push(giou_loss(g, pred, target));
        }
    }
    let sum = |g: &mut Graph, terms: &[Var]| -> Option<Var> {
        let mut it = terms.iter().copied();
        let first = it.next()?;
        Some(it.fold(first, |acc, v| g.add(acc, v)))
    };
    let cls = sum(g, &cls_terms);
    let l1 = sum(g, &l1_terms);
    let gi = sum(g, &giou_terms);
    let value = |g: &Graph, v: Option<Var>| v.map(|v| g.value(v).item()).unwrap_or(0.0);
    let mut breakdown = LossBreakdown {
        cls: value(g, cls),
        l1: value(g, l1),
        giou: value(g, gi),
        total: 0.0,
        v: gts.len(),
    };
    breakdown.total = cfg.cls_weight * breakdown.cls + cfg.l1_weight * breakdown.l1 + cfg.giou_weight * breakdown.giou;
    let mut parts = Vec::new();
    for (v, w) in [(cls, cfg.cls_weight), (l1, cfg.l1_weight), (gi, cfg.giou_weight)] {
        if let Some(v) = v {
            parts.push(g.scale(v, w));
        }
    }
    let total = match sum(g, &parts) {
        Some(t) => t,
        None => g.constant(Tensor::scalar(0.0)),
    };
    Ok(FrameLoss { total, breakdown })
}

/// Detection-only objective of one frame: total over `max(V, 1)`.
pub fn stage1_loss(g: &mut Graph, f: &FrameLoss) -> Var {
    g.scale(f.total, 1.0 / f.breakdown.v.max(1) as f64)
}

/// Clip objective: the summed frame totals over the summed ground-truth count.
pub fn cal_loss(g: &mut Graph, frames: &[FrameLoss], clip_len: usize) -> Result<Var> {
    if frames.len() != clip_len {
        return Err(ModelError::Input(format!(
            "clip has {} frames, expected {clip_len}",
            frames.len()
        )));
    }
    let v: usize = frames.iter().map(|f| f.breakdown.v).sum();
    let mut acc = frames[0].total;
    for f in &frames[1..] {
        acc = g.add(acc, f.total);
    }
    Ok(g.scale(acc, 1.0 / v.max(1) as f64))
}

/// Clip objective recomputed from stored breakdowns.
pub fn cal_value(frames: &[LossBreakdown]) -> f64 {
    let total: f64 = frames.iter().map(|f| f.total).sum();
    let v: usize = frames.iter().map(|f| f.v).sum();
    total / v.max(1) as f64
}

/// Scalar recomputation of [`frame_loss`] from plain per-layer values.
pub fn frame_loss_reference(
    logits: &[Vec<f64>],
    boxes: &[Vec<[f64; 4]>],
    m: &MatchResult,
    gts: &[[f64; 4]],
    cfg: &LossConfig,
) -> LossBreakdown {
    let mut b = LossBreakdown {
        v: gts.len(),
        ..Default::default()
    };
    for (lg, bx) in logits.iter().zip(boxes) {
        let t = targets(m, lg.len());
        for (x, t) in lg.iter().zip(&t) {
            b.cls += focal_loss_scalar(*x, *t, cfg.focal_alpha, cfg.focal_gamma);
        }
        for &(i, j) in &m.pairs {
            b.l1 += (0..4).map(|k| (bx[i][k] - gts[j][k]).abs()).sum::<f64>();
            b.giou += 1.0 - giou(&cxcywh_to_xyxy(bx[i]), &cxcywh_to_xyxy(gts[j]));
        }
    }
    b.total = cfg.cls_weight * b.cls + cfg.l1_weight * b.l1 + cfg.giou_weight * b.giou;
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use querytrack_autograd::inverse_sigmoid_f64;

    fn output(g: &mut Graph, logits: &[Vec<f64>], boxes: &[Vec<[f64; 4]>]) -> DecoderOutput {
        let q = logits[0].len();
        let l = logits
            .iter()
            .map(|v| g.input(Tensor::from_vec(&[q], v.clone())))
            .collect();
        let b = boxes
            .iter()
            .map(|v| g.input(Tensor::from_vec(&[q, 4], v.iter().flatten().copied().collect())))
            .collect();
        let hidden = g.constant(Tensor::zeros(&[q, 1]));
        DecoderOutput {
            logits: l,
            boxes: b,
            hidden,
        }
    }

    #[test]
    fn focal_at_half_for_positive() {
        let v = focal_loss_scalar(0.0, 1.0, 0.25, 2.0);
        assert!((v - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((v - 0.043321).abs() < 1e-6);
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(&[1], vec![0.0]));
        let l = focal_loss(&mut g, x, &[1.0], 0.25, 2.0);
        assert!((g.value(l).item() - v).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let b = [0.4, 0.5, 0.2, 0.3];
        let mut g = Graph::new();
        let out = output(&mut g, &[vec![inverse_sigmoid_f64(1.0 - 1e-9, 1e-12)]], &[vec![b]]);
        let m = MatchResult::from_pairs(vec![(0, 0)], 1, 1);
        let f = frame_loss(&mut g, &out, &m, &[b], &LossConfig::default()).unwrap();
        assert!(f.breakdown.l1 == 0.0);
        assert!(f.breakdown.giou.abs() < 1e-12);
        assert!(f.breakdown.cls < 1e-12);
    }

    #[test]
    fn doubling_l1_weight_doubles_its_share() {
        let mut g = Graph::new();
        let out = output(&mut g, &[vec![0.3, -0.2]], &[vec![[0.3, 0.3, 0.2, 0.2], [0.6, 0.6, 0.1, 0.2]]]);
        let m = MatchResult::from_pairs(vec![(1, 0)], 2, 1);
        let gts = [[0.55, 0.62, 0.15, 0.2]];
        let a = LossConfig::default();
        let b = LossConfig {
            l1_weight: 2.0 * a.l1_weight,
            ..a.clone()
        };
        let fa = frame_loss(&mut g, &out, &m, &gts, &a).unwrap().breakdown;
        let fb = frame_loss(&mut g, &out, &m, &gts, &b).unwrap().breakdown;
        assert_eq!(fb.total - fa.total, a.l1_weight * fa.l1);
    }

    #[test]
    fn graph_matches_scalar_reference() {
        let logits = vec![vec![0.3, -1.2, 2.0], vec![-0.4, 0.8, 1.1]];
        let boxes = vec![
            vec![[0.2, 0.3, 0.1, 0.2], [0.6, 0.5, 0.3, 0.3], [0.5, 0.8, 0.2, 0.1]],
            vec![[0.25, 0.3, 0.12, 0.2], [0.62, 0.5, 0.3, 0.25], [0.5, 0.7, 0.2, 0.15]],
        ];
        let gts = [[0.22, 0.31, 0.1, 0.18], [0.5, 0.75, 0.25, 0.1]];
        let m = MatchResult::from_pairs(vec![(0, 0), (2, 1)], 3, 2);
        let mut g = Graph::new();
        let out = output(&mut g, &logits, &boxes);
        let cfg = LossConfig::default();
        let f = frame_loss(&mut g, &out, &m, &gts, &cfg).unwrap();
        let r = frame_loss_reference(&logits, &boxes, &m, &gts, &cfg);
        for (a, b) in [(f.breakdown.cls, r.cls), (f.breakdown.l1, r.l1), (f.breakdown.giou, r.giou), (f.breakdown.total, r.total)] {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(f.breakdown.v, 2);
        assert!((g.value(f.total).item() - r.total).abs() < 1e-12);
    }

    #[test]
    fn box_gradients_match_finite_differences() {
        let logits = vec![vec![0.1, 0.5]];
        let boxes = vec![vec![[0.3, 0.35, 0.2, 0.25], [0.6, 0.55, 0.15, 0.3]]];
        let gts = [[0.55, 0.5, 0.2, 0.25], [0.32, 0.3, 0.18, 0.2]];
        let m = MatchResult::from_pairs(vec![(0, 1), (1, 0)], 2, 2);
        let cfg = LossConfig::default();
        let mut g = Graph::new();
        let out = output(&mut g, &logits, &boxes);
        let f = frame_loss(&mut g, &out, &m, &gts, &cfg).unwrap();
        let grads = g.backward(f.total);
        let gb = grads.get(out.boxes[0]).unwrap().data().to_vec();
        let h = 1e-6;
        for q in 0..2 {
            for k in 0..4 {
                let mut plus = boxes.clone();
                plus[0][q][k] += h;
                let mut minus = boxes.clone();
                minus[0][q][k] -= h;
                let fd = (frame_loss_reference(&logits, &plus, &m, &gts, &cfg).total
                    - frame_loss_reference(&logits, &minus, &m, &gts, &cfg).total)
                    / (2.0 * h);
                let an = gb[q * 4 + k];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(1e-3), "q{q} k{k}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn empty_frame_clamps_normalizer() {
        let mut g = Graph::new();
        let out = output(&mut g, &[vec![0.0, 1.0]], &[vec![[0.5; 4]; 2]]);
        let m = MatchResult::from_pairs(vec![], 2, 0);
        let f = frame_loss(&mut g, &out, &m, &[], &LossConfig::default()).unwrap();
        let s = stage1_loss(&mut g, &f);
        assert_eq!(f.breakdown.v, 0);
        assert_eq!(f.breakdown.l1 + f.breakdown.giou, 0.0);
        assert!((g.value(s).item() - 2.0 * f.breakdown.cls).abs() < 1e-12);
    }

    fn constant_frame(g: &mut Graph, total: f64, v: usize) -> FrameLoss {
        FrameLoss {
            total: g.constant(Tensor::scalar(total)),
            breakdown: LossBreakdown {
                total,
                v,
                ..Default::default()
            },
        }
    }

    #[test]
    fn stage1_divides_by_count() {
        let mut g = Graph::new();
        let f = constant_frame(&mut g, 4.0, 2);
        let s = stage1_loss(&mut g, &f);
        assert_eq!(g.value(s).item(), 2.0);
        let c = cal_loss(&mut g, &[f], 1).unwrap();
        assert_eq!(g.value(c).item(), 2.0);
    }

    #[test]
    fn clip_average_examples() {
        let mut g = Graph::new();
        let ones: Vec<_> = (0..5).map(|_| constant_frame(&mut g, 1.0, 1)).collect();
        let c = cal_loss(&mut g, &ones, 5).unwrap();
        assert_eq!(g.value(c).item(), 1.0);
        let ramp: Vec<_> = (1..=5).map(|t| constant_frame(&mut g, t as f64, 1)).collect();
        let c = cal_loss(&mut g, &ramp, 5).unwrap();
        assert_eq!(g.value(c).item(), 3.0);
        let stored: Vec<_> = ramp.iter().map(|f| f.breakdown).collect();
        assert_eq!(cal_value(&stored), 3.0);
        assert!(matches!(cal_loss(&mut g, &ramp, 4), Err(ModelError::Input(_))));
    }
}
