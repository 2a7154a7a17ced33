//! Randomized score streams through the query lifecycle, checked against an
//! independent per-identity miss counter.

use std::collections::{BTreeMap, BTreeSet};

use querytrack_model::queries::{propagate, IdentityAllocator, QueryKind, QueryMeta};
use querytrack_model::TrackerConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

pub const STEPS: usize = 100_000;

/// Scores concentrated on the thresholds and the ends of the range.
fn score(rng: &mut ChaCha8Rng, cfg: &TrackerConfig) -> f64 {
    match rng.random_range(0..8) {
        0 => cfg.tau_keep,
        1 => cfg.tau_new,
        2 => 0.0,
        3 => 1.0,
        _ => rng.random::<f64>(),
    }
}

/// Runs `steps` frames; returns the first violated invariant.
pub fn simulate(seed: u64, steps: usize, cfg: &TrackerConfig) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = IdentityAllocator::default();
    let mut tracks: Vec<QueryMeta> = Vec::new();
    let mut misses: BTreeMap<u32, u32> = BTreeMap::new();
    let mut removed: BTreeSet<u32> = BTreeSet::new();
    for step in 0..steps {
        let mut meta = tracks.clone();
        meta.extend(std::iter::repeat_n(QueryMeta::detect(), rng.random_range(0..4)));
        let scores: Vec<f64> = (0..meta.len()).map(|_| score(&mut rng, cfg)).collect();
        let before = ids.allocated();
        let out = propagate(&meta, &scores, cfg, &mut ids).map_err(|e| format!("step {step}: {e}"))?;

        let mut kept = 0;
        for (i, m) in meta.iter().enumerate().filter(|(_, m)| m.kind == QueryKind::Track) {
            let id = m.identity.ok_or(format!("step {step}: track without identity"))?;
            let c = misses.get_mut(&id).ok_or(format!("step {step}: unknown identity {id}"))?;
            *c = if scores[i] > cfg.tau_keep { 0 } else { *c + 1 };
            let survive = *c <= cfg.max_misses;
            match out.iter().find(|s| s.meta.identity == Some(id)) {
                Some(s) if survive => {
                    if s.meta.miss_count != *c {
                        return Err(format!("step {step}: identity {id} miss count {} vs {c}", s.meta.miss_count));
                    }
                    kept += 1;
                }
                Some(_) => return Err(format!("step {step}: identity {id} kept after {c} misses")),
                None if survive => return Err(format!("step {step}: identity {id} dropped after {c} misses")),
                None => {
                    removed.insert(id);
                }
            }
        }
        misses.retain(|id, _| !removed.contains(id));
        let promotions = (0..meta.len())
            .filter(|&i| meta[i].kind == QueryKind::Detect && scores[i] > cfg.tau_new)
            .count();
        if out.len() != kept + promotions {
            return Err(format!("step {step}: {} survivors, expected {kept} kept + {promotions} new", out.len()));
        }
        if ids.allocated() - before != promotions as u32 {
            return Err(format!("step {step}: allocator advanced by {}", ids.allocated() - before));
        }
        let mut seen = BTreeSet::new();
        for s in &out {
            let id = s.meta.identity.ok_or(format!("step {step}: survivor without identity"))?;
            if !seen.insert(id) {
                return Err(format!("step {step}: identity {id} held twice"));
            }
            if removed.contains(&id) {
                return Err(format!("step {step}: removed identity {id} reappeared"));
            }
            if s.promoted {
                if id <= before {
                    return Err(format!("step {step}: promotion reused identity {id}"));
                }
                misses.insert(id, 0);
            }
        }
        tracks = out.iter().map(|s| s.meta).collect();
    }
    Ok(())
}

pub fn check() -> Outcome {
    let configs = [
        TrackerConfig::default(),
        TrackerConfig {
            max_misses: 0,
            tau_keep: 0.3,
            tau_new: 0.8,
            ..Default::default()
        },
        TrackerConfig {
            max_misses: 12,
            tau_keep: 0.7,
            tau_new: 0.2,
            ..Default::default()
        },
    ];
    let mut failures = Vec::new();
    for (k, cfg) in configs.iter().enumerate() {
        if let Err(e) = simulate(k as u64 + 1, STEPS, cfg) {
            failures.push(format!("config {k}: {e}"));
        }
    }
    Outcome::from_failures(
        format!("{} configurations x {STEPS} steps: identity uniqueness, union cardinality, removal timing", configs.len()),
        failures,
    )
}
