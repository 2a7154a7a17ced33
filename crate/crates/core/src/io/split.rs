//! Half split of an annotated sequence into train and eval parts.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use super::mot::GtRecord;
use super::DataError;

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceHalf {
    /// Original frame numbers covered by this half.
    pub frames: RangeInclusive<u32>,
    /// Ground truth with identities renumbered from 1 in order of first
    /// appearance. Frame numbers are unchanged.
    pub gt: Vec<GtRecord>,
    /// New identity → original identity.
    pub identity_map: BTreeMap<u32, u32>,
}

fn rebase(records: impl Iterator<Item = GtRecord>, frames: RangeInclusive<u32>) -> SequenceHalf {
    let mut sorted: Vec<GtRecord> = records.collect();
    sorted.sort_by_key(|r| (r.frame, r.id));
    let mut forward = BTreeMap::new();
    let mut identity_map = BTreeMap::new();
    for r in &mut sorted {
        let next = forward.len() as u32 + 1;
        let new = *forward.entry(r.id).or_insert(next);
        identity_map.insert(new, r.id);
        r.id = new;
    }
    SequenceHalf {
        frames,
        gt: sorted,
        identity_map,
    }
}

/// Frames `1..=⌊F/2⌋` go to the train half and the rest to the eval half.
pub fn half_split(frame_count: u32, gt: &[GtRecord]) -> Result<(SequenceHalf, SequenceHalf), DataError> {
    if frame_count < 2 {
        return Err(DataError::Invalid(format!(
            "half split needs at least 2 frames, sequence has {frame_count}"
        )));
    }
    let mid = frame_count / 2;
    let train = rebase(gt.iter().copied().filter(|r| r.frame <= mid), 1..=mid);
    let eval = rebase(
        gt.iter().copied().filter(|r| r.frame > mid && r.frame <= frame_count),
        mid + 1..=frame_count,
    );
    Ok((train, eval))
}
