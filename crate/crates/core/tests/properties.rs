use std::collections::BTreeMap;

use proptest::prelude::*;
use querytrack_core::geometry::{convert, giou, giou_with_grad, iou, BoxFormat, LabeledBox, PixelBox};
use querytrack_core::io::mot::{format_results, parse_results_str, FrameBoxes};
use querytrack_core::metrics::{evaluate_sequence, SequenceEval};
use querytrack_core::{hungarian, CostMatrix};

fn xyxy() -> impl Strategy<Value = [f64; 4]> {
    (0.0..100.0f64, 0.0..100.0f64, 0.5..50.0f64, 0.5..50.0f64).prop_map(|(x, y, w, h)| [x, y, x + w, y + h])
}

/// Exhaustive minimum over injective maps from the smaller side.
fn brute_force(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    let (small, large, at): (usize, usize, Box<dyn Fn(usize, usize) -> f64>) = if n <= m {
        (n, m, Box::new(|s, l| cost[s][l]))
    } else {
        (m, n, Box::new(|s, l| cost[l][s]))
    };
    fn go(i: usize, small: usize, used: &mut Vec<bool>, at: &dyn Fn(usize, usize) -> f64) -> f64 {
        if i == small {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.min(at(i, j) + go(i + 1, small, used, at));
                used[j] = false;
            }
        }
        best
    }
    go(0, small, &mut vec![false; large], &*at)
}

fn cost_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=6, 1usize..=6).prop_flat_map(|(n, m)| proptest::collection::vec(proptest::collection::vec(-10.0..10.0f64, m), n))
}

prop_compose! {
    /// A random tracking sequence: a few identities over a few frames.
    fn tracks()(rows in proptest::collection::vec(
        (1u32..=6, 1u32..=5, 0.0..80.0f64, 0.0..80.0f64, 4.0..30.0f64, 4.0..30.0f64), 1..25)) -> FrameBoxes {
        let mut out = FrameBoxes::new();
        for (frame, id, l, t, w, h) in rows {
            let v: &mut Vec<LabeledBox<PixelBox>> = out.entry(frame).or_default();
            if !v.iter().any(|b| b.identity == Some(id)) {
                v.push(LabeledBox::tracked(PixelBox::new(l, t, w, h), id, 1.0));
            }
        }
        out
    }
}

fn map_boxes(f: &FrameBoxes, g: impl Fn(&LabeledBox<PixelBox>) -> LabeledBox<PixelBox>) -> FrameBoxes {
    f.iter().map(|(&k, v)| (k, v.iter().map(&g).collect())).collect()
}

fn metrics(gt: &FrameBoxes, pred: &FrameBoxes) -> [f64; 5] {
    let last = gt.keys().chain(pred.keys()).copied().max().unwrap_or(1);
    let seq = SequenceEval::new("p", 1, last, gt, pred).unwrap();
    let r = evaluate_sequence(&seq).report().unwrap();
    [r.hota, r.deta, r.assa, r.idf1, r.mota]
}

proptest! {
    #[test]
    fn iou_and_giou_bounds(a in xyxy(), b in xyxy()) {
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((v - iou(&b, &a)).abs() < 1e-12);
        let g = giou(&a, &b);
        prop_assert!((-1.0..=1.0).contains(&g));
        prop_assert!(g <= v + 1e-12);
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn giou_gradient_matches_finite_differences(a in xyxy(), b in xyxy()) {
        let (v, grad) = giou_with_grad(a, b);
        prop_assert!((v - giou(&a, &b)).abs() < 1e-12);
        let eps = 1e-6;
        for k in 0..8 {
            let bump = |d: f64| {
                let (mut a2, mut b2) = (a, b);
                if k < 4 { a2[k] += d } else { b2[k - 4] += d }
                giou(&a2, &b2)
            };
            let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
            // min/max kinks: skip coordinates that tie with an edge of the other box
            let (i, axis) = (k % 4, k % 2);
            let (mine, other) = if k < 4 { (a, b) } else { (b, a) };
            if [other[axis], other[axis + 2]].iter().any(|o| (mine[i] - o).abs() < 1e-5) {
                continue;
            }
            prop_assert!((fd - grad[k]).abs() <= 1e-4 * fd.abs().max(1e-2), "k={k} fd={fd} an={}", grad[k]);
        }
    }

    #[test]
    fn convert_round_trips(c in xyxy(), iw in 50.0..400.0f64, ih in 50.0..400.0f64) {
        let formats = [BoxFormat::CxCyWhNormalized, BoxFormat::XyxyPixels, BoxFormat::LtwhPixels];
        for from in formats {
            for to in formats {
                let start = convert(c, BoxFormat::XyxyPixels, from, Some((iw, ih))).unwrap();
                let there = convert(start, from, to, Some((iw, ih))).unwrap();
                let back = convert(there, to, from, Some((iw, ih))).unwrap();
                for k in 0..4 {
                    prop_assert!((back[k] - start[k]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn hungarian_matches_brute_force(rows in cost_rows()) {
        let cost = CostMatrix::from_rows(&rows).unwrap();
        let m = hungarian(&cost).unwrap();
        prop_assert_eq!(m.pairs.len(), rows.len().min(rows[0].len()));
        prop_assert!((m.total_cost(&cost) - brute_force(&rows)).abs() < 1e-9);
    }

    #[test]
    fn hungarian_invariant_under_constant_shift(rows in cost_rows(), c in -50.0..50.0f64) {
        let cost = CostMatrix::from_rows(&rows).unwrap();
        let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x + c).collect()).collect();
        let shifted = CostMatrix::from_rows(&shifted).unwrap();
        let (a, b) = (hungarian(&cost).unwrap(), hungarian(&shifted).unwrap());
        let k = a.pairs.len() as f64;
        prop_assert!((b.total_cost(&shifted) - a.total_cost(&cost) - k * c).abs() < 1e-8);
    }

    #[test]
    fn results_round_trip(frames in tracks(), scores in proptest::collection::vec(0.0..1.0f64, 40)) {
        let i = std::cell::Cell::new(0);
        let quantized = map_boxes(&frames, |b| {
            i.set(i.get() + 1);
            let s = (scores[i.get() % scores.len()] * 1e6).round() / 1e6;
            LabeledBox { score: s, ..*b }
        });
        let text = format_results(&quantized).unwrap();
        let mut sorted = quantized.clone();
        for v in sorted.values_mut() {
            v.sort_by_key(|b| b.identity);
        }
        prop_assert_eq!(parse_results_str(&text).unwrap(), sorted);
        prop_assert_eq!(format_results(&parse_results_str(&text).unwrap()).unwrap(), text);
    }

    #[test]
    fn metric_ranges(gt in tracks(), pred in tracks()) {
        let [hota, deta, assa, idf1, mota] = metrics(&gt, &pred);
        for v in [hota, deta, assa, idf1] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
        prop_assert!(mota <= 1.0);
    }

    #[test]
    fn metrics_scale_invariant(gt in tracks(), pred in tracks(), s in 0.25..4.0f64) {
        let scale = |f: &FrameBoxes| map_boxes(f, |b| LabeledBox { bbox: b.bbox.scaled(s), ..*b });
        let a = metrics(&gt, &pred);
        let b = metrics(&scale(&gt), &scale(&pred));
        for k in 0..5 {
            prop_assert!((a[k] - b[k]).abs() < 1e-9, "{k}: {} vs {}", a[k], b[k]);
        }
    }

    #[test]
    fn metrics_invariant_under_identity_relabelling(gt in tracks(), pred in tracks(), shift in 1u32..100) {
        // bijection id -> 1 + (id * 7 + shift) mod 101 on 1..=5
        let relabel = |f: &FrameBoxes| map_boxes(f, |b| LabeledBox { identity: b.identity.map(|i| 1 + (i * 7 + shift) % 101), ..*b });
        let a = metrics(&gt, &pred);
        let b = metrics(&gt, &relabel(&pred));
        for k in 0..5 {
            prop_assert!((a[k] - b[k]).abs() < 1e-9);
        }
        let perfect = metrics(&gt, &relabel(&gt));
        prop_assert_eq!(perfect, [1.0; 5]);
    }
}

#[test]
fn empty_predictions_score_zero() {
    let mut gt = FrameBoxes::new();
    gt.insert(1, vec![LabeledBox::tracked(PixelBox::new(0.0, 0.0, 10.0, 10.0), 1, 1.0)]);
    assert_eq!(metrics(&gt, &BTreeMap::new()), [0.0; 5]);
}
