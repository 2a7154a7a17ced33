use super::{MetricError, SequenceEval};
use crate::assignment::{hungarian, CostMatrix};

/// Localization thresholds 0.05, 0.10, …, 0.95.
pub const ALPHAS: [f64; 19] = {
    let mut a = [0.0; 19];
    let mut i = 0;
    while i < 19 {
        a[i] = 0.05 * (i + 1) as f64;
        i += 1;
    }
    a
};

const EPS: f64 = 1e-10;

/// Per-threshold raw sums. `ass_sum[a]` is `Σ_c A(c)` over that threshold's
/// true positives, so AssA pools across sequences by adding it up.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HotaAccum {
    pub tp: [usize; 19],
    pub fn_: [usize; 19],
    pub fp: [usize; 19],
    pub ass_sum: [f64; 19],
}

/// HOTA family values per threshold and averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct HotaResult {
    pub hota_alpha: [f64; 19],
    pub deta_alpha: [f64; 19],
    pub assa_alpha: [f64; 19],
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
}

impl HotaAccum {
    pub fn merge(&mut self, o: &HotaAccum) {
        for a in 0..19 {
            self.tp[a] += o.tp[a];
            self.fn_[a] += o.fn_[a];
            self.fp[a] += o.fp[a];
            self.ass_sum[a] += o.ass_sum[a];
        }
    }

    pub fn result(&self, name: &str) -> Result<HotaResult, MetricError> {
        if self.tp[0] + self.fn_[0] == 0 {
            return Err(MetricError::NoGroundTruth(name.to_string()));
        }
        let mut r = HotaResult {
            hota_alpha: [0.0; 19],
            deta_alpha: [0.0; 19],
            assa_alpha: [0.0; 19],
            hota: 0.0,
            deta: 0.0,
            assa: 0.0,
        };
        for a in 0..19 {
            let det_denom = (self.tp[a] + self.fn_[a] + self.fp[a]).max(1) as f64;
            let deta = self.tp[a] as f64 / det_denom;
            let assa = self.ass_sum[a] / self.tp[a].max(1) as f64;
            r.deta_alpha[a] = deta;
            r.assa_alpha[a] = assa;
            r.hota_alpha[a] = (deta * assa).sqrt();
        }
        r.hota = r.hota_alpha.iter().sum::<f64>() / 19.0;
        r.deta = r.deta_alpha.iter().sum::<f64>() / 19.0;
        r.assa = r.assa_alpha.iter().sum::<f64>() / 19.0;
        Ok(r)
    }
}

pub(crate) fn hota_accum(seq: &SequenceEval) -> HotaAccum {
    let (ng, np) = (seq.num_gt_ids(), seq.num_pred_ids());
    let mut gt_count = vec![0.0; ng];
    let mut pred_count = vec![0.0; np];
    let mut potential = vec![0.0; ng * np];
    let frame_ious: Vec<Vec<Vec<f64>>> = seq.frames().iter().map(|f| f.ious()).collect();

    // Soft co-occurrence of each (gt, pred) identity pair across the
    // sequence; used to prefer associations that are consistent over time.
    for (frame, ious) in seq.frames().iter().zip(&frame_ious) {
        for &g in &frame.gt_ids {
            gt_count[g] += 1.0;
        }
        for &p in &frame.pred_ids {
            pred_count[p] += 1.0;
        }
        if frame.gt_ids.is_empty() || frame.pred_ids.is_empty() {
            continue;
        }
        let row_sum: Vec<f64> = ious.iter().map(|r| r.iter().sum()).collect();
        let col_sum: Vec<f64> = (0..frame.pred_ids.len())
            .map(|j| ious.iter().map(|r| r[j]).sum())
            .collect();
        for (gi, &g) in frame.gt_ids.iter().enumerate() {
            for (pj, &p) in frame.pred_ids.iter().enumerate() {
                let denom = row_sum[gi] + col_sum[pj] - ious[gi][pj];
                if denom > EPS {
                    potential[g * np + p] += ious[gi][pj] / denom;
                }
            }
        }
    }
    let global: Vec<f64> = (0..ng * np)
        .map(|k| {
            let (g, p) = (k / np.max(1), k % np.max(1));
            let denom = gt_count[g] + pred_count[p] - potential[k];
            if denom > EPS {
                potential[k] / denom
            } else {
                0.0
            }
        })
        .collect();

    let mut acc = HotaAccum::default();
    let mut matches = vec![vec![0.0; ng * np]; 19];
    for (frame, ious) in seq.frames().iter().zip(&frame_ious) {
        let (fg, fp) = (frame.gt_ids.len(), frame.pred_ids.len());
        for (a, &alpha) in ALPHAS.iter().enumerate() {
            let mut num = 0;
            if fg > 0 && fp > 0 {
                let valid = |r: usize, c: usize| ious[r][c] >= alpha - EPS;
                let cost = CostMatrix::from_fn(fg, fp, |r, c| {
                    if valid(r, c) {
                        let g = frame.gt_ids[r];
                        let p = frame.pred_ids[c];
                        -(global[g * np + p] * ious[r][c])
                    } else {
                        0.0
                    }
                });
                let res = hungarian(&cost).expect("finite scores");
                for (r, c) in res.pairs {
                    if valid(r, c) {
                        num += 1;
                        let (g, p) = (frame.gt_ids[r], frame.pred_ids[c]);
                        matches[a][g * np + p] += 1.0;
                    }
                }
            }
            acc.tp[a] += num;
            acc.fn_[a] += fg - num;
            acc.fp[a] += fp - num;
        }
    }
    // A(c) = TPA / (TPA + FNA + FPA) depends only on the identity pair, so
    // Σ_c A(c) = Σ_pairs count · A(pair).
    for a in 0..19 {
        let mut s = 0.0;
        for g in 0..ng {
            for p in 0..np {
                let m = matches[a][g * np + p];
                if m > 0.0 {
                    s += m * m / (gt_count[g] + pred_count[p] - m);
                }
            }
        }
        acc.ass_sum[a] = s;
    }
    acc
}

/// HOTA, DetA and AssA per threshold and averaged over [`ALPHAS`].
pub fn hota(seq: &SequenceEval) -> Result<HotaResult, MetricError> {
    hota_accum(seq).result(seq.name())
}

#[cfg(test)]
mod tests {
    use super::super::testutil::seq;
    use super::*;

    #[test]
    fn alphas_grid() {
        assert!((ALPHAS[0] - 0.05).abs() < 1e-15);
        assert!((ALPHAS[18] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn perfect_tracking_is_one_everywhere() {
        let gt = [(1, 1, 0., 0., 10., 10.), (2, 1, 1., 0., 10., 10.), (2, 2, 40., 40., 8., 8.)];
        let r = hota(&seq(&gt, &gt)).unwrap();
        for a in 0..19 {
            assert!((r.hota_alpha[a] - 1.0).abs() < 1e-12);
        }
        assert!((r.hota - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_predictions() {
        let gt = [(1, 1, 0., 0., 10., 10.)];
        let r = hota(&seq(&gt, &[])).unwrap();
        assert_eq!((r.hota, r.deta), (0.0, 0.0));
    }

    #[test]
    fn fresh_identity_every_frame() {
        // one object, two frames, a new prediction identity each frame:
        // TPA = 1, FNA = 1, FPA = 0 for both true positives
        let gt = [(1, 1, 0., 0., 10., 10.), (2, 1, 0., 0., 10., 10.)];
        let pred = [(1, 5, 0., 0., 10., 10.), (2, 6, 0., 0., 10., 10.)];
        let r = hota(&seq(&gt, &pred)).unwrap();
        assert!((r.deta - 1.0).abs() < 1e-12);
        assert!((r.assa - 0.5).abs() < 1e-12);
        assert!((r.hota - 0.5f64.sqrt()).abs() < 1e-12);
    }
}
