//! Query bookkeeping: identities, the detect/track union carried between
//! frames and the emission rule.

use std::collections::BTreeSet;

use crate::config::TrackerConfig;
use crate::error::{ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryKind {
    Detect,
    Track,
}

/// Non-differentiable state of one query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryMeta {
    pub kind: QueryKind,
    /// Set iff `kind == Track`.
    pub identity: Option<u32>,
    /// Consecutive frames at or below the keep threshold (tracks only).
    pub miss_count: u32,
}

impl QueryMeta {
    pub fn detect() -> Self {
        Self {
            kind: QueryKind::Detect,
            identity: None,
            miss_count: 0,
        }
    }

    pub fn track(identity: u32, miss_count: u32) -> Self {
        Self {
            kind: QueryKind::Track,
            identity: Some(identity),
            miss_count,
        }
    }
}

/// Per-sequence identity counter; identities start at 1 and are never reused.
#[derive(Clone, Debug)]
pub struct IdentityAllocator {
    next: u32,
}

impl Default for IdentityAllocator {
    fn default() -> Self {
        Self { next: 1 }
    }
}

impl IdentityAllocator {
    pub fn allocate(&mut self) -> u32 {
        let id = self.next;
        self.next += 1;
        id
    }

    /// Number of identities handed out so far.
    pub fn allocated(&self) -> u32 {
        self.next - 1
    }
}

/// One entry of the next frame's track set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Survivor {
    /// Index of the query this frame that the track continues.
    pub source: usize,
    pub meta: QueryMeta,
    /// Newly promoted from a detect query this frame.
    pub promoted: bool,
}

/// Checks that track identities are set and unique.
pub fn check_identities(meta: &[QueryMeta]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for m in meta {
        match (m.kind, m.identity) {
            (QueryKind::Track, Some(id)) => {
                if !seen.insert(id) {
                    return Err(ModelError::Invariant(format!("identity {id} held by two track queries")));
                }
            }
            (QueryKind::Track, None) => return Err(ModelError::Invariant("track query without identity".into())),
            (QueryKind::Detect, Some(_)) => return Err(ModelError::Invariant("detect query with identity".into())),
            (QueryKind::Detect, None) => {}
        }
    }
    Ok(())
}

/// Score-driven union of surviving tracks and promoted detections.
///
/// Tracks come first in their current order, then promotions in query order.
/// A track scoring at or below `tau_keep` counts a miss and is dropped once
/// its misses exceed `max_misses`.
pub fn propagate(meta: &[QueryMeta], scores: &[f64], cfg: &TrackerConfig, ids: &mut IdentityAllocator) -> Result<Vec<Survivor>> {
    if meta.len() != scores.len() {
        return Err(ModelError::Invariant(format!(
            "{} queries but {} scores",
            meta.len(),
            scores.len()
        )));
    }
    check_identities(meta)?;
    let mut out = Vec::new();
    if cfg.propagate {
        for (i, (m, &s)) in meta.iter().zip(scores).enumerate() {
            if m.kind != QueryKind::Track {
                continue;
            }
            let misses = if s > cfg.tau_keep { 0 } else { m.miss_count.saturating_add(1) };
            if misses <= cfg.max_misses {
                out.push(Survivor {
                    source: i,
                    meta: QueryMeta::track(m.identity.expect("checked"), misses),
                    promoted: false,
                });
            }
        }
    }
    for (i, (m, &s)) in meta.iter().zip(scores).enumerate() {
        if m.kind == QueryKind::Detect && s > cfg.tau_new {
            out.push(Survivor {
                source: i,
                meta: QueryMeta::track(ids.allocate(), 0),
                promoted: true,
            });
        }
    }
    Ok(out)
}

/// Indices into `survivors` that are reported this frame, sorted by identity.
pub fn emit(survivors: &[Survivor], scores: &[f64], tau_emit: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..survivors.len())
        .filter(|&i| scores[survivors[i].source] > tau_emit)
        .collect();
    idx.sort_by_key(|&i| survivors[i].meta.identity);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrackerConfig {
        TrackerConfig::default()
    }

    #[test]
    fn first_frame_promotions() {
        let meta = vec![QueryMeta::detect(); 3];
        let mut ids = IdentityAllocator::default();
        let s = propagate(&meta, &[0.9, 0.6, 0.1], &cfg(), &mut ids).unwrap();
        let got: Vec<_> = s.iter().map(|v| v.meta.identity.unwrap()).collect();
        assert_eq!(got, vec![1, 2]);
        assert!(s.iter().all(|v| v.promoted));
    }

    #[test]
    fn union_cardinality() {
        let mut meta: Vec<QueryMeta> = (1..=3).map(|i| QueryMeta::track(i, 0)).collect();
        meta.extend([QueryMeta::detect(); 4]);
        let mut ids = IdentityAllocator::default();
        for _ in 0..3 {
            ids.allocate();
        }
        let s = propagate(&meta, &[0.9, 0.2, 0.7, 0.8, 0.1, 0.95, 0.3], &cfg(), &mut ids).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s[3].meta.identity, Some(4));
        assert_eq!(s[1].meta.miss_count, 1);
    }

    #[test]
    fn removal_after_tolerated_misses() {
        let mut meta = vec![QueryMeta::track(1, 0)];
        let mut ids = IdentityAllocator::default();
        ids.allocate();
        for frame in 1..=6 {
            let s = propagate(&meta, &[0.3], &cfg(), &mut ids).unwrap();
            if frame < 6 {
                assert_eq!(s.len(), 1, "frame {frame}");
                meta = vec![s[0].meta];
            } else {
                assert!(s.is_empty());
            }
        }
    }

    #[test]
    fn identity_collision_is_fatal() {
        let meta = vec![QueryMeta::track(2, 0), QueryMeta::track(2, 0)];
        let mut ids = IdentityAllocator::default();
        assert!(matches!(propagate(&meta, &[1.0, 1.0], &cfg(), &mut ids), Err(ModelError::Invariant(_))));
    }

    #[test]
    fn emission_threshold_and_order() {
        let survivors = vec![
            Survivor { source: 0, meta: QueryMeta::track(5, 0), promoted: false },
            Survivor { source: 1, meta: QueryMeta::track(2, 0), promoted: false },
            Survivor { source: 2, meta: QueryMeta::track(9, 1), promoted: false },
        ];
        assert_eq!(emit(&survivors, &[0.9, 0.8, 0.2], 0.5), vec![1, 0]);
        assert!(emit(&[], &[], 0.5).is_empty());
    }

    #[test]
    fn disabled_propagation_clears_tracks() {
        let meta = vec![QueryMeta::track(1, 0), QueryMeta::detect()];
        let mut ids = IdentityAllocator::default();
        ids.allocate();
        let c = TrackerConfig { propagate: false, ..cfg() };
        let s = propagate(&meta, &[0.9, 0.9], &c, &mut ids).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].meta.identity, Some(2));
    }
}
