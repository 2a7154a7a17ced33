use std::collections::HashMap;

use super::{MetricError, SequenceEval, MATCH_IOU};
use crate::assignment::{hungarian, CostMatrix};

/// Raw CLEAR-MOT counts; add them across sequences before taking ratios.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClearCounts {
    pub gt: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
}

impl ClearCounts {
    pub fn mota(&self, name: &str) -> Result<f64, MetricError> {
        if self.gt == 0 {
            return Err(MetricError::NoGroundTruth(name.to_string()));
        }
        Ok(1.0 - (self.fp + self.fn_ + self.idsw) as f64 / self.gt as f64)
    }

    pub fn merge(&mut self, o: &ClearCounts) {
        self.gt += o.gt;
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.idsw += o.idsw;
    }
}

/// Frame-by-frame CLEAR matching.
///
/// Pairings from the previous frame are kept while their IoU stays at or
/// above the gate; remaining boxes are matched by minimizing `1 − IoU` over
/// gated pairs. An identity switch is a ground-truth identity whose matched
/// prediction identity differs from the one at its previous matched frame.
pub(crate) fn clear_counts(seq: &SequenceEval) -> ClearCounts {
    let mut counts = ClearCounts::default();
    let mut prev_frame: HashMap<usize, usize> = HashMap::new();
    let mut last_match: HashMap<usize, usize> = HashMap::new();
    for frame in seq.frames() {
        let ng = frame.gt_ids.len();
        let np = frame.pred_ids.len();
        counts.gt += ng;
        let ious = frame.ious();
        let mut gt_used = vec![false; ng];
        let mut pred_used = vec![false; np];
        let mut matches: Vec<(usize, usize)> = Vec::new();

        for (gi, &gid) in frame.gt_ids.iter().enumerate() {
            let Some(&prev_pid) = prev_frame.get(&gid) else {
                continue;
            };
            if let Some(pj) = frame.pred_ids.iter().position(|&p| p == prev_pid) {
                if !pred_used[pj] && ious[gi][pj] >= MATCH_IOU {
                    gt_used[gi] = true;
                    pred_used[pj] = true;
                    matches.push((gi, pj));
                }
            }
        }

        let rest_g: Vec<usize> = (0..ng).filter(|&i| !gt_used[i]).collect();
        let rest_p: Vec<usize> = (0..np).filter(|&j| !pred_used[j]).collect();
        if !rest_g.is_empty() && !rest_p.is_empty() {
            let cost = CostMatrix::from_fn(rest_g.len(), rest_p.len(), |r, c| {
                let v = ious[rest_g[r]][rest_p[c]];
                if v >= MATCH_IOU {
                    1.0 - v
                } else {
                    1.0
                }
            });
            let res = hungarian(&cost).expect("IoU costs are finite");
            for (r, c) in res.pairs {
                let (gi, pj) = (rest_g[r], rest_p[c]);
                if ious[gi][pj] >= MATCH_IOU {
                    matches.push((gi, pj));
                }
            }
        }

        prev_frame.clear();
        for &(gi, pj) in &matches {
            let gid = frame.gt_ids[gi];
            let pid = frame.pred_ids[pj];
            if let Some(&last) = last_match.get(&gid) {
                if last != pid {
                    counts.idsw += 1;
                }
            }
            last_match.insert(gid, pid);
            prev_frame.insert(gid, pid);
        }
        counts.tp += matches.len();
        counts.fn_ += ng - matches.len();
        counts.fp += np - matches.len();
    }
    counts
}

/// MOTA and the counts behind it.
pub fn clear_mot(seq: &SequenceEval) -> Result<(f64, ClearCounts), MetricError> {
    let counts = clear_counts(seq);
    Ok((counts.mota(seq.name())?, counts))
}
