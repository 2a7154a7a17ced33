//! Overfitting one frame (detection objective) and one clip (clip
//! objective) from fresh weights.

use querytrack_core::io::synthetic::SceneSampler;
use querytrack_model::data::{TrainFrame, TrainSequence};
use querytrack_model::model::{save_checkpoint, Model};
use querytrack_model::train::{LogRow, Trainer};
use querytrack_model::TrainConfig;

use crate::Outcome;

pub const ITERATIONS: usize = 500;
/// Loss must fall below this fraction of its iteration-10 value.
pub const TARGET_FRACTION: f64 = 0.1;
pub const REFERENCE_ITERATION: usize = 10;
pub const CLIP_LEN: usize = 5;

/// Smoke configuration: the desk preset with a constant learning rate.
pub fn smoke_config(stage: u8) -> TrainConfig {
    let mut cfg = TrainConfig::from_toml("preset = \"micro\"\nseed = 3\n", &[]).expect("valid smoke configuration");
    cfg.stage = stage;
    for s in [&mut cfg.stage1, &mut cfg.stage2] {
        s.iterations = ITERATIONS;
        s.lr_drop_at = 2.0;
    }
    cfg.stage2.clip_len = CLIP_LEN;
    cfg
}

/// The first `CLIP_LEN` frames of a synthetic scene with objects in each.
pub fn smoke_sequence(cfg: &TrainConfig) -> TrainSequence {
    let sampler = SceneSampler {
        frames: CLIP_LEN as u32,
        late_spawn: 0.0,
        ..SceneSampler::default()
    };
    let scene = sampler.sample("smoke", 11);
    TrainSequence::from_synthetic(&scene, &cfg.model).expect("smoke scene renders")
}

/// `(iteration-10 loss, best loss, first iteration below target)`.
fn summarize(rows: &[LogRow]) -> (f64, f64, Option<usize>) {
    let reference = rows[REFERENCE_ITERATION].loss;
    let best = rows.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
    let hit = rows.iter().position(|r| r.loss < TARGET_FRACTION * reference);
    (reference, best, hit)
}

fn stage1() -> Result<(f64, f64, Option<usize>), String> {
    let cfg = smoke_config(1);
    let seq = smoke_sequence(&cfg);
    let frame: &TrainFrame = &seq.frames[0];
    let mut t = Trainer::new(cfg).map_err(|e| e.to_string())?;
    let mut rows = Vec::with_capacity(ITERATIONS);
    for _ in 0..ITERATIONS {
        rows.push(t.stage1_step(frame).map_err(|e| e.to_string())?);
    }
    Ok(summarize(&rows))
}

fn stage2() -> Result<(f64, f64, Option<usize>), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = dir.path().join("fresh.ckpt");
    let mut cfg = smoke_config(2);
    let fresh = Model::new(cfg.model.clone(), cfg.seed).map_err(|e| e.to_string())?;
    save_checkpoint(&start, &fresh, None).map_err(|e| e.to_string())?;
    cfg.stage1_checkpoint = Some(start);
    let seq = smoke_sequence(&cfg);
    let clip: Vec<&TrainFrame> = seq.frames.iter().collect();
    let mut t = Trainer::new(cfg).map_err(|e| e.to_string())?;
    let mut rows = Vec::with_capacity(ITERATIONS);
    for _ in 0..ITERATIONS {
        rows.push(t.stage2_step(&clip).map_err(|e| e.to_string())?);
    }
    Ok(summarize(&rows))
}

pub fn check() -> Outcome {
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for (name, run) in [("stage-1 frame", stage1 as fn() -> _), ("stage-2 clip", stage2)] {
        match run() {
            Ok((reference, best, hit)) => {
                parts.push(format!(
                    "{name}: {reference:.3} at it {REFERENCE_ITERATION} -> best {best:.4}{}",
                    hit.map(|i| format!(", below {TARGET_FRACTION}x the it-{REFERENCE_ITERATION} loss at it {i}")).unwrap_or_default()
                ));
                if hit.is_none() {
                    failures.push(format!("{name} never fell below {TARGET_FRACTION} of the iteration-{REFERENCE_ITERATION} loss"));
                }
            }
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    Outcome::from_failures(parts.join("; "), failures)
}
