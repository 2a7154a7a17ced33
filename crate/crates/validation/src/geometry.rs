//! Assignment against exhaustive search, and box overlap against
//! endpoint-sorting area arithmetic.

use querytrack_core::geometry::{giou, giou_with_grad, iou};
use querytrack_core::{hungarian, CostMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

pub const MATRICES: usize = 200;
pub const MAX_SIDE: usize = 6;
pub const BOX_PAIRS: usize = 10_000;
pub const OVERLAP_TOL: f64 = 1e-12;
pub const GRADIENT_PAIRS: usize = 1_000;
pub const GRADIENT_REL_TOL: f64 = 1e-4;

/// Minimum total cost over injective maps from the smaller side, with one
/// minimizing assignment as `(row, col)` pairs.
pub fn brute_force(cost: &CostMatrix) -> (f64, Vec<(usize, usize)>) {
    let (n, m) = (cost.rows(), cost.cols());
    let transpose = n > m;
    let (small, large) = if transpose { (m, n) } else { (n, m) };
    let at = |s: usize, l: usize| if transpose { cost.get(l, s) } else { cost.get(s, l) };
    let mut best = (f64::INFINITY, Vec::new());
    let mut perm: Vec<usize> = Vec::with_capacity(small);
    let mut used = vec![false; large];
    fn go(
        perm: &mut Vec<usize>,
        used: &mut [bool],
        small: usize,
        at: &dyn Fn(usize, usize) -> f64,
        best: &mut (f64, Vec<usize>),
    ) {
        if perm.len() == small {
            let total: f64 = perm.iter().enumerate().map(|(s, &l)| at(s, l)).sum();
            if total < best.0 {
                *best = (total, perm.clone());
            }
            return;
        }
        for l in 0..used.len() {
            if !used[l] {
                used[l] = true;
                perm.push(l);
                go(perm, used, small, at, best);
                perm.pop();
                used[l] = false;
            }
        }
    }
    go(&mut perm, &mut used, small, &at, &mut best);
    let mut pairs: Vec<(usize, usize)> = best
        .1
        .iter()
        .enumerate()
        .map(|(s, &l)| if transpose { (l, s) } else { (s, l) })
        .collect();
    pairs.sort();
    (best.0, pairs)
}

/// Integer-valued matrices make optimal totals exact; real-valued ones
/// have a unique optimum almost surely, so the assignment itself must agree.
pub fn check_hungarian() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = Vec::new();
    for k in 0..MATRICES {
        let (n, m) = (rng.random_range(1..=MAX_SIDE), rng.random_range(1..=MAX_SIDE));
        let integer = k % 2 == 0;
        let data: Vec<f64> = (0..n * m)
            .map(|_| {
                if integer {
                    rng.random_range(-20..=20) as f64
                } else {
                    rng.random_range(-10.0..10.0)
                }
            })
            .collect();
        let cost = CostMatrix::new(n, m, data).unwrap();
        let got = hungarian(&cost).unwrap();
        let (best, best_pairs) = brute_force(&cost);
        let mut pairs = got.pairs.clone();
        pairs.sort();
        if pairs.len() != n.min(m) {
            failures.push(format!("matrix {k} ({n}x{m}): {} pairs", pairs.len()));
        } else if integer && got.total_cost(&cost) != best {
            failures.push(format!("matrix {k} ({n}x{m}): cost {} vs {best}", got.total_cost(&cost)));
        } else if !integer && pairs != best_pairs {
            failures.push(format!("matrix {k} ({n}x{m}): assignment differs from the optimum"));
        }
    }
    let summary = format!("{} of {MATRICES} matrices up to {MAX_SIDE}x{MAX_SIDE} optimal", MATRICES - failures.len());
    Outcome::from_failures(summary, failures.into_iter().take(5).collect())
}

/// Length of the overlap of two intervals via their sorted endpoints.
fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    if a.1 <= b.0 || b.1 <= a.0 {
        return 0.0;
    }
    let mut e = [a.0, a.1, b.0, b.1];
    e.sort_by(f64::total_cmp);
    e[2] - e[1]
}

fn span(a: (f64, f64), b: (f64, f64)) -> f64 {
    let mut e = [a.0, a.1, b.0, b.1];
    e.sort_by(f64::total_cmp);
    e[3] - e[0]
}

/// `(iou, giou)` from areas of axis-aligned rectangles `[x1, y1, x2, y2]`.
pub fn overlap_oracle(a: [f64; 4], b: [f64; 4]) -> (f64, f64) {
    let inter = overlap((a[0], a[2]), (b[0], b[2])) * overlap((a[1], a[3]), (b[1], b[3]));
    let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    let union = area(a) + area(b) - inter;
    let hull = span((a[0], a[2]), (b[0], b[2])) * span((a[1], a[3]), (b[1], b[3]));
    (inter / union, inter / union - (hull - union) / hull)
}

fn random_box(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let (x, y) = (rng.random_range(-50.0..150.0), rng.random_range(-50.0..150.0));
    let (w, h) = (rng.random_range(0.01..80.0), rng.random_range(0.01..80.0));
    [x, y, x + w, y + h]
}

/// Pairs drawn to hit disjoint, touching, nested and identical layouts.
fn random_pair(rng: &mut ChaCha8Rng) -> ([f64; 4], [f64; 4]) {
    let a = random_box(rng);
    let b = match rng.random_range(0..5) {
        0 => a,
        1 => {
            let (sx, sy) = (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
            let (w, h) = (a[2] - a[0], a[3] - a[1]);
            [a[0] + 0.05 * w, a[1] + 0.05 * h, a[0] + 0.05 * w + sx * 0.9 * w, a[1] + 0.05 * h + sy * 0.9 * h]
        }
        2 => [a[2], a[1], a[2] + 10.0, a[3]],
        _ => random_box(rng),
    };
    if rng.random_bool(0.5) {
        (a, b)
    } else {
        (b, a)
    }
}

pub fn check_boxes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for k in 0..BOX_PAIRS {
        let (a, b) = random_pair(&mut rng);
        let (i_want, g_want) = overlap_oracle(a, b);
        let err = (iou(&a, &b) - i_want).abs().max((giou(&a, &b) - g_want).abs());
        worst = worst.max(err);
        if err > OVERLAP_TOL {
            failures.push(format!("pair {k}: error {err:.2e}"));
        }
    }
    let mut worst_grad: f64 = 0.0;
    let eps = 1e-6;
    let mut audited = 0;
    for _ in 0..GRADIENT_PAIRS {
        let (a, b) = random_pair(&mut rng);
        let (_, grad) = giou_with_grad(a, b);
        for k in 0..8 {
            let (i, axis) = (k % 4, k % 2);
            let (mine, other) = if k < 4 { (a, b) } else { (b, a) };
            // min/max kinks have no derivative
            if [other[axis], other[axis + 2]]
                .iter()
                .any(|o| (mine[i] - o).abs() < 1e-4)
            {
                continue;
            }
            let bump = |d: f64| {
                let (mut a2, mut b2) = (a, b);
                if k < 4 {
                    a2[k] += d
                } else {
                    b2[k - 4] += d
                }
                giou(&a2, &b2)
            };
            let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-2);
            worst_grad = worst_grad.max(rel);
            audited += 1;
        }
    }
    if worst_grad > GRADIENT_REL_TOL {
        failures.push(format!("giou gradient relative error {worst_grad:.2e}"));
    }
    let summary = format!(
        "{BOX_PAIRS} pairs, worst overlap error {worst:.1e} (tol {OVERLAP_TOL:e}); {audited} gradient entries, worst rel {worst_grad:.1e} (tol {GRADIENT_REL_TOL:e})"
    );
    Outcome::from_failures(summary, failures.into_iter().take(5).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_hand_values() {
        let (i, g) = overlap_oracle([0.0, 0.0, 2.0, 2.0], [1.0, 1.0, 3.0, 3.0]);
        assert!((i - 1.0 / 7.0).abs() < 1e-15);
        assert!((g - (1.0 / 7.0 - 2.0 / 9.0)).abs() < 1e-15);
        let (i, g) = overlap_oracle([0.0, 0.0, 1.0, 1.0], [2.0, 0.0, 3.0, 1.0]);
        assert_eq!(i, 0.0);
        assert!((g + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn brute_force_small() {
        let c = CostMatrix::from_rows(&[vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0]]).unwrap();
        assert_eq!(brute_force(&c), (3.0, vec![(0, 1), (1, 0)]));
    }
}
