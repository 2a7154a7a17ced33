use super::{MetricError, SequenceEval, MATCH_IOU};
use crate::assignment::{hungarian, CostMatrix};

/// Identity-level true/false positive and false negative counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IdCounts {
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

impl IdCounts {
    pub fn idf1(&self, name: &str) -> Result<f64, MetricError> {
        if self.idtp + self.idfn == 0 {
            return Err(MetricError::NoGroundTruth(name.to_string()));
        }
        let denom = 2 * self.idtp + self.idfp + self.idfn;
        Ok(2.0 * self.idtp as f64 / denom as f64)
    }

    pub fn merge(&mut self, o: &IdCounts) {
        self.idtp += o.idtp;
        self.idfp += o.idfp;
        self.idfn += o.idfn;
    }
}

pub(crate) fn id_counts(seq: &SequenceEval) -> IdCounts {
    let (ng, np) = (seq.num_gt_ids(), seq.num_pred_ids());
    let mut gt_len = vec![0usize; ng];
    let mut pred_len = vec![0usize; np];
    let mut overlap = vec![0usize; ng * np];
    for frame in seq.frames() {
        for &g in &frame.gt_ids {
            gt_len[g] += 1;
        }
        for &p in &frame.pred_ids {
            pred_len[p] += 1;
        }
        let ious = frame.ious();
        for (gi, &g) in frame.gt_ids.iter().enumerate() {
            for (pj, &p) in frame.pred_ids.iter().enumerate() {
                if ious[gi][pj] >= MATCH_IOU {
                    overlap[g * np + p] += 1;
                }
            }
        }
    }
    // Square (ng+np) problem: real pairs in the top-left block, each gt may
    // instead take its private dummy column and each prediction its dummy row.
    let n = ng + np;
    let big = (gt_len.iter().sum::<usize>() + pred_len.iter().sum::<usize>() + 1) as f64;
    let fn_cost = |r: usize, c: usize| -> f64 {
        match (r < ng, c < np) {
            (true, true) => (gt_len[r] - overlap[r * np + c]) as f64,
            (true, false) => {
                if c - np == r {
                    gt_len[r] as f64
                } else {
                    big
                }
            }
            _ => 0.0,
        }
    };
    let fp_cost = |r: usize, c: usize| -> f64 {
        match (r < ng, c < np) {
            (true, true) => (pred_len[c] - overlap[r * np + c]) as f64,
            (false, true) => {
                if r - ng == c {
                    pred_len[c] as f64
                } else {
                    big
                }
            }
            _ => 0.0,
        }
    };
    let total_gt: usize = gt_len.iter().sum();
    let total_pred: usize = pred_len.iter().sum();
    if n == 0 {
        return IdCounts::default();
    }
    let cost = CostMatrix::from_fn(n, n, |r, c| fn_cost(r, c) + fp_cost(r, c));
    let res = hungarian(&cost).expect("integer costs are finite");
    let mut idfn = 0.0;
    let mut idfp = 0.0;
    for &(r, c) in &res.pairs {
        idfn += fn_cost(r, c);
        idfp += fp_cost(r, c);
    }
    let idfn = idfn as usize;
    let idfp = idfp as usize;
    IdCounts {
        idtp: total_gt - idfn,
        idfp,
        idfn,
    }
    .checked(total_pred)
}

impl IdCounts {
    fn checked(self, total_pred: usize) -> Self {
        debug_assert_eq!(self.idtp + self.idfp, total_pred);
        self
    }
}

/// Global trajectory-level identity matching and the resulting IDF1.
pub fn idf1(seq: &SequenceEval) -> Result<(f64, IdCounts), MetricError> {
    let c = id_counts(seq);
    Ok((c.idf1(seq.name())?, c))
}
