//! CLEAR-MOT, identity (IDF1) and HOTA tracking metrics.

mod clear;
mod hota;
mod identity;
mod report;

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::geometry::{iou, LabeledBox, PixelBox};

pub use clear::{clear_mot, ClearCounts};
pub use hota::{hota, HotaAccum, HotaResult, ALPHAS};
pub use identity::{idf1, IdCounts};
pub use report::{evaluate_sequence, MetricReport, SequenceMetrics, TABLE_COLUMNS};

/// IoU threshold shared by CLEAR-MOT and identity matching.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("sequence `{0}` has no ground-truth boxes; ratios are undefined")]
    NoGroundTruth(String),
    #[error("frame {frame}: box without identity")]
    MissingIdentity { frame: u32 },
    #[error("frame {frame}: identity {id} appears twice")]
    DuplicateIdentity { frame: u32, id: u32 },
    #[error("frame {frame}: identity 0 is not allowed")]
    ZeroIdentity { frame: u32 },
    #[error("frame {frame} lies outside the sequence range {first}..={last}")]
    FrameOutOfRange { frame: u32, first: u32, last: u32 },
}

/// One frame of an evaluation: identities are dense indices into the
/// sequence's ground-truth or prediction identity tables.
#[derive(Clone, Debug, Default)]
pub(crate) struct EvalFrame {
    pub gt_ids: Vec<usize>,
    pub gt_boxes: Vec<PixelBox>,
    pub pred_ids: Vec<usize>,
    pub pred_boxes: Vec<PixelBox>,
}

impl EvalFrame {
    /// IoU matrix, ground truth as rows.
    pub fn ious(&self) -> Vec<Vec<f64>> {
        self.gt_boxes
            .iter()
            .map(|g| self.pred_boxes.iter().map(|p| iou(g, p)).collect())
            .collect()
    }
}

/// Ground truth and predictions of one sequence, frame by frame.
#[derive(Clone, Debug)]
pub struct SequenceEval {
    name: String,
    first_frame: u32,
    frames: Vec<EvalFrame>,
    num_gt_ids: usize,
    num_pred_ids: usize,
    gt_labels: Vec<u32>,
    pred_labels: Vec<u32>,
}

type FrameMap = BTreeMap<u32, Vec<LabeledBox<PixelBox>>>;

fn intern(
    frame: u32,
    boxes: &[LabeledBox<PixelBox>],
    table: &mut HashMap<u32, usize>,
    labels: &mut Vec<u32>,
) -> Result<(Vec<usize>, Vec<PixelBox>), MetricError> {
    let mut ids = Vec::with_capacity(boxes.len());
    let mut seen = Vec::with_capacity(boxes.len());
    for b in boxes {
        let id = b.identity.ok_or(MetricError::MissingIdentity { frame })?;
        if id == 0 {
            return Err(MetricError::ZeroIdentity { frame });
        }
        if seen.contains(&id) {
            return Err(MetricError::DuplicateIdentity { frame, id });
        }
        seen.push(id);
        let next = table.len();
        let dense = *table.entry(id).or_insert_with(|| {
            labels.push(id);
            next
        });
        ids.push(dense);
    }
    Ok((ids, boxes.iter().map(|b| b.bbox).collect()))
}

impl SequenceEval {
    /// Frames `first..=last`; frames missing from either map are empty.
    pub fn new(
        name: impl Into<String>,
        first: u32,
        last: u32,
        gt: &FrameMap,
        pred: &FrameMap,
    ) -> Result<Self, MetricError> {
        for &f in gt.keys().chain(pred.keys()) {
            if f < first || f > last {
                return Err(MetricError::FrameOutOfRange {
                    frame: f,
                    first,
                    last,
                });
            }
        }
        let mut gt_table = HashMap::new();
        let mut pred_table = HashMap::new();
        let mut gt_labels = Vec::new();
        let mut pred_labels = Vec::new();
        let mut frames = Vec::new();
        let empty = Vec::new();
        for f in first..=last {
            let (gt_ids, gt_boxes) = intern(
                f,
                gt.get(&f).unwrap_or(&empty),
                &mut gt_table,
                &mut gt_labels,
            )?;
            let (pred_ids, pred_boxes) = intern(
                f,
                pred.get(&f).unwrap_or(&empty),
                &mut pred_table,
                &mut pred_labels,
            )?;
            frames.push(EvalFrame {
                gt_ids,
                gt_boxes,
                pred_ids,
                pred_boxes,
            });
        }
        Ok(Self {
            name: name.into(),
            first_frame: first,
            frames,
            num_gt_ids: gt_table.len(),
            num_pred_ids: pred_table.len(),
            gt_labels,
            pred_labels,
        })
    }

    /// Covers every frame present in either map, starting at frame 1.
    pub fn from_maps(name: impl Into<String>, gt: &FrameMap, pred: &FrameMap) -> Result<Self, MetricError> {
        let last = gt
            .keys()
            .chain(pred.keys())
            .copied()
            .max()
            .unwrap_or(1)
            .max(1);
        Self::new(name, 1, last, gt, pred)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn first_frame(&self) -> u32 {
        self.first_frame
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_gt_boxes(&self) -> usize {
        self.frames.iter().map(|f| f.gt_ids.len()).sum()
    }

    pub fn num_pred_boxes(&self) -> usize {
        self.frames.iter().map(|f| f.pred_ids.len()).sum()
    }

    /// Original (file) identity of a dense ground-truth index.
    pub fn gt_label(&self, dense: usize) -> u32 {
        self.gt_labels[dense]
    }

    pub fn pred_label(&self, dense: usize) -> u32 {
        self.pred_labels[dense]
    }

    pub(crate) fn frames(&self) -> &[EvalFrame] {
        &self.frames
    }

    pub(crate) fn num_gt_ids(&self) -> usize {
        self.num_gt_ids
    }

    pub(crate) fn num_pred_ids(&self) -> usize {
        self.num_pred_ids
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// `(frame, id, left, top, w, h)` tuples into a frame map.
    pub fn frames(rows: &[(u32, u32, f64, f64, f64, f64)]) -> FrameMap {
        let mut m: FrameMap = BTreeMap::new();
        for &(f, id, l, t, w, h) in rows {
            m.entry(f)
                .or_default()
                .push(LabeledBox::tracked(PixelBox::new(l, t, w, h), id, 1.0));
        }
        m
    }

    pub fn seq(gt: &[(u32, u32, f64, f64, f64, f64)], pred: &[(u32, u32, f64, f64, f64, f64)]) -> SequenceEval {
        SequenceEval::from_maps("test", &frames(gt), &frames(pred)).unwrap()
    }
}
