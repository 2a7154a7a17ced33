//! Hand-computed metric cases and perfect/empty tracking on synthetic
//! sequences.

use querytrack_core::geometry::{LabeledBox, PixelBox};
use querytrack_core::io::mot::{group_gt, FrameBoxes};
use querytrack_core::io::synthetic::SceneSampler;
use querytrack_core::metrics::{clear_mot, hota, idf1, SequenceEval};

use crate::Outcome;

pub const RATIO_TOL: f64 = 1e-9;
pub const SYNTHETIC_SEQUENCES: u64 = 20;

/// `(frame, identity)` rows, all with the same box.
fn track(rows: &[(u32, u32)]) -> FrameBoxes {
    let mut out = FrameBoxes::new();
    for &(f, id) in rows {
        out.entry(f)
            .or_default()
            .push(LabeledBox::tracked(PixelBox::new(10.0, 20.0, 30.0, 60.0), id, 1.0));
    }
    out
}

fn seq(gt: &FrameBoxes, pred: &FrameBoxes, last: u32) -> SequenceEval {
    SequenceEval::new("case", 1, last, gt, pred).expect("valid case")
}

struct Checker {
    cases: usize,
    failures: Vec<String>,
}

impl Checker {
    fn near(&mut self, case: &str, got: f64, want: f64) {
        self.cases += 1;
        if (got - want).abs() > RATIO_TOL {
            self.failures.push(format!("{case}: got {got:.6}, expected {want:.6}"));
        }
    }

    fn eq(&mut self, case: &str, got: usize, want: usize) {
        self.cases += 1;
        if got != want {
            self.failures.push(format!("{case}: got {got}, expected {want}"));
        }
    }
}

fn micro_cases(c: &mut Checker) {
    let gt = track(&[(1, 1), (1, 2), (2, 1), (2, 2), (3, 2)]);
    let s = seq(&gt, &gt, 3);
    let (mota, counts) = clear_mot(&s).unwrap();
    c.near("clear perfect MOTA", mota, 1.0);
    c.eq("clear perfect FP+FN+IDSW", counts.fp + counts.fn_ + counts.idsw, 0);
    c.near("idf1 perfect", idf1(&s).unwrap().0, 1.0);
    let h = hota(&s).unwrap();
    for (k, ((hh, dd), aa)) in h.hota_alpha.iter().zip(&h.deta_alpha).zip(&h.assa_alpha).enumerate() {
        c.near(&format!("hota perfect alpha {k}"), hh.min(*dd).min(*aa), 1.0);
    }

    let none = FrameBoxes::new();
    let s = seq(&gt, &none, 3);
    let (mota, counts) = clear_mot(&s).unwrap();
    c.near("clear empty MOTA", mota, 0.0);
    c.eq("clear empty FN", counts.fn_, 5);
    c.near("idf1 empty", idf1(&s).unwrap().0, 0.0);
    let h = hota(&s).unwrap();
    c.near("hota empty HOTA", h.hota, 0.0);
    c.near("hota empty DetA", h.deta, 0.0);

    let gt = track(&[(1, 1), (2, 1)]);
    let s = seq(&gt, &track(&[(1, 7), (2, 9)]), 2);
    let (mota, counts) = clear_mot(&s).unwrap();
    c.eq("clear switch IDSW", counts.idsw, 1);
    c.near("clear switch MOTA", mota, 0.5);

    let gt = track(&[(1, 1), (2, 1), (3, 1), (4, 1)]);
    let s = seq(&gt, &track(&[(1, 1), (2, 1), (3, 2), (4, 2)]), 4);
    c.near("idf1 split trajectory", idf1(&s).unwrap().0, 0.5);

    // fresh prediction identity on each of two frames
    let gt = track(&[(1, 1), (2, 1)]);
    let s = seq(&gt, &track(&[(1, 1), (2, 2)]), 2);
    let h = hota(&s).unwrap();
    c.near("hota fresh identity DetA", h.deta, 1.0);
    c.near("hota fresh identity AssA", h.assa, 1.0 / 3.0);
    c.near("hota fresh identity HOTA", h.hota, (1.0f64 / 3.0).sqrt());
}

fn synthetic_cases(c: &mut Checker) {
    let sampler = SceneSampler {
        frames: 15,
        ..SceneSampler::with_side(160)
    };
    for seed in 0..SYNTHETIC_SEQUENCES {
        let scene = sampler.sample(format!("oracle-{seed}"), 1000 + seed);
        let gt = group_gt(&scene.generate().unwrap().ground_truth());
        let perfect = seq(&gt, &gt, scene.frames);
        let empty = seq(&gt, &FrameBoxes::new(), scene.frames);
        let name = &scene.name;
        c.near(&format!("{name} perfect MOTA"), clear_mot(&perfect).unwrap().0, 1.0);
        c.near(&format!("{name} perfect IDF1"), idf1(&perfect).unwrap().0, 1.0);
        c.near(&format!("{name} perfect HOTA"), hota(&perfect).unwrap().hota, 1.0);
        c.near(&format!("{name} empty MOTA"), clear_mot(&empty).unwrap().0, 0.0);
        c.near(&format!("{name} empty IDF1"), idf1(&empty).unwrap().0, 0.0);
        c.near(&format!("{name} empty HOTA"), hota(&empty).unwrap().hota, 0.0);
    }
}

pub fn check() -> Outcome {
    let mut c = Checker {
        cases: 0,
        failures: Vec::new(),
    };
    micro_cases(&mut c);
    synthetic_cases(&mut c);
    let summary = format!(
        "{} of {} exact cases hold (tol {RATIO_TOL:e}, {SYNTHETIC_SEQUENCES} synthetic sequences)",
        c.cases - c.failures.len(),
        c.cases
    );
    Outcome::from_failures(summary, c.failures)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn track_builder_shares_one_box() {
        let t = track(&[(1, 1), (1, 2), (3, 1)]);
        assert_eq!(t[&1].len(), 2);
        assert_eq!(t[&3][0].bbox, t[&1][0].bbox);
    }
}
