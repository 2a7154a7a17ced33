//! Clip objective against a scalar per-frame re-summation.

use querytrack_autograd::{Graph, Tensor};
use querytrack_core::{hungarian, CostMatrix};
use querytrack_model::decoder::DecoderOutput;
use querytrack_model::loss::{cal_loss, cal_value, frame_loss, frame_loss_reference, stage1_loss, LossBreakdown};
use querytrack_model::LossConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

pub const CLIPS: u64 = 100;
pub const CLIP_TOL: f64 = 1e-6;

struct RandomFrame {
    logits: Vec<Vec<f64>>,
    boxes: Vec<Vec<[f64; 4]>>,
    gts: Vec<[f64; 4]>,
}

fn random_box(rng: &mut ChaCha8Rng) -> [f64; 4] {
    [
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
        rng.random_range(0.02..0.4),
        rng.random_range(0.02..0.4),
    ]
}

fn random_frame(rng: &mut ChaCha8Rng, layers: usize) -> RandomFrame {
    let q = rng.random_range(1..10);
    let g = rng.random_range(0..6);
    RandomFrame {
        logits: (0..layers).map(|_| (0..q).map(|_| rng.random_range(-5.0..5.0)).collect()).collect(),
        boxes: (0..layers).map(|_| (0..q).map(|_| random_box(rng)).collect()).collect(),
        gts: (0..g).map(|_| random_box(rng)).collect(),
    }
}

fn output(g: &mut Graph, f: &RandomFrame) -> DecoderOutput {
    let q = f.logits[0].len();
    DecoderOutput {
        logits: f.logits.iter().map(|l| g.input(Tensor::from_vec(&[q], l.clone()))).collect(),
        boxes: f
            .boxes
            .iter()
            .map(|b| g.input(Tensor::from_vec(&[q, 4], b.iter().flatten().copied().collect())))
            .collect(),
        hidden: g.constant(Tensor::zeros(&[q, 1])),
    }
}

fn random_match(rng: &mut ChaCha8Rng, queries: usize, gts: usize) -> querytrack_core::MatchResult {
    let cost = CostMatrix::new(queries, gts, (0..queries * gts).map(|_| rng.random::<f64>()).collect()).unwrap();
    hungarian(&cost).unwrap()
}

pub fn check() -> Outcome {
    let cfg = LossConfig::default();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for clip in 0..CLIPS {
        let mut rng = ChaCha8Rng::seed_from_u64(clip);
        let len = rng.random_range(1..=6);
        let layers = rng.random_range(1..=4);
        let mut g = Graph::new();
        let mut losses = Vec::new();
        let mut oracle: Vec<LossBreakdown> = Vec::new();
        for _ in 0..len {
            let f = random_frame(&mut rng, layers);
            let out = output(&mut g, &f);
            let m = random_match(&mut rng, f.logits[0].len(), f.gts.len());
            losses.push(frame_loss(&mut g, &out, &m, &f.gts, &cfg).unwrap());
            oracle.push(frame_loss_reference(&f.logits, &f.boxes, &m, &f.gts, &cfg));
        }
        let total = cal_loss(&mut g, &losses, len).unwrap();
        let got = g.value(total).item();
        let want = cal_value(&oracle);
        worst = worst.max((got - want).abs());
        if (got - want).abs() > CLIP_TOL {
            failures.push(format!("clip {clip}: {got} vs {want}"));
        }
    }
    let mut mismatched = 0;
    for seed in 0..CLIPS {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let f = random_frame(&mut rng, 3);
        let mut g = Graph::new();
        let out = output(&mut g, &f);
        let m = random_match(&mut rng, f.logits[0].len(), f.gts.len());
        let fl = frame_loss(&mut g, &out, &m, &f.gts, &cfg).unwrap();
        let a = stage1_loss(&mut g, &fl);
        let b = cal_loss(&mut g, &[fl], 1).unwrap();
        if g.value(a).item() != g.value(b).item() {
            mismatched += 1;
        }
    }
    if mismatched > 0 {
        failures.push(format!("{mismatched} single frames differ between the two objectives"));
    }
    Outcome::from_failures(
        format!("{CLIPS} clips, worst deviation {worst:.1e} (tol {CLIP_TOL:e}); {CLIPS} length-1 clips identical"),
        failures.into_iter().take(5).collect(),
    )
}
