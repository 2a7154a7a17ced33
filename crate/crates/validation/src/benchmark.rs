//! Two-stage training on the synthetic benchmark, then tracking of the
//! held-out sequences with and without query propagation.

use std::io::sink;
use std::time::Instant;

use querytrack_core::io::mot::group_gt;
use querytrack_core::io::synthetic::{SceneSampler, SyntheticScene};
use querytrack_core::metrics::{evaluate_sequence, MetricReport, SequenceEval, SequenceMetrics};
use querytrack_model::data::{synthetic_benchmark, TrainSequence};
use querytrack_model::model::Model;
use querytrack_model::tracker::run_inference;
use querytrack_model::train::Trainer;
use querytrack_model::{TrackerConfig, TrainConfig};

use crate::Outcome;

pub const CONFIG: &str = include_str!("../../../configs/desk-benchmark.toml");
pub const MIN_MOTA: f64 = 0.5;
pub const MIN_IDF1: f64 = 0.5;

pub fn config() -> TrainConfig {
    TrainConfig::from_toml(CONFIG, &[]).expect("benchmark configuration is valid")
}

/// Combined report over `scenes` tracked by `model`.
pub fn evaluate(model: &Model, tracker: &TrackerConfig, scenes: &[SyntheticScene], data: &[TrainSequence]) -> Result<MetricReport, String> {
    let mut parts = Vec::new();
    for (scene, seq) in scenes.iter().zip(data) {
        let frames = seq.frames.iter().map(|f| f.image.as_slice());
        let pred = run_inference(model, tracker, frames, 1, scene.width as f64, scene.height as f64).map_err(|e| e.to_string())?;
        let gt = group_gt(&scene.generate().map_err(|e| e.to_string())?.ground_truth());
        let eval = SequenceEval::new(&scene.name, 1, scene.frames, &gt, &pred).map_err(|e| e.to_string())?;
        parts.push(evaluate_sequence(&eval));
    }
    SequenceMetrics::combined("held-out", &parts).report().map_err(|e| e.to_string())
}

/// Trains both stages; returns the final model.
pub fn train(cfg: &TrainConfig, data: &[TrainSequence]) -> Result<Model, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ckpt = dir.path().join("stage1.ckpt");
    let mut s1 = cfg.clone();
    s1.stage = 1;
    let mut t = Trainer::new(s1).map_err(|e| e.to_string())?;
    t.run(data, Some(&ckpt), &mut sink()).map_err(|e| e.to_string())?;
    let mut s2 = cfg.clone();
    s2.stage = 2;
    s2.stage1_checkpoint = Some(ckpt);
    let mut t = Trainer::new(s2).map_err(|e| e.to_string())?;
    t.run(data, None, &mut sink()).map_err(|e| e.to_string())?;
    Ok(t.model)
}

fn run() -> Result<Outcome, String> {
    let cfg = config();
    let (train_scenes, eval_scenes) = synthetic_benchmark(&SceneSampler::default(), cfg.seed);
    let prepare = |scenes: &[SyntheticScene]| -> Result<Vec<TrainSequence>, String> {
        scenes
            .iter()
            .map(|s| TrainSequence::from_synthetic(s, &cfg.model).map_err(|e| e.to_string()))
            .collect()
    };
    let train_data = prepare(&train_scenes)?;
    let eval_data = prepare(&eval_scenes)?;
    let start = Instant::now();
    let model = train(&cfg, &train_data)?;
    let trained = start.elapsed().as_secs_f64() / 60.0;
    let full = evaluate(&model, &cfg.tracker, &eval_scenes, &eval_data)?;
    let ablation = TrackerConfig {
        propagate: false,
        ..cfg.tracker.clone()
    };
    let ablated = evaluate(&model, &ablation, &eval_scenes, &eval_data)?;
    let summary = format!(
        "trained {}+{} iterations in {trained:.0} min; full MOTA {:.3} IDF1 {:.3} HOTA {:.3}; no propagation IDF1 {:.3}",
        cfg.stage1.iterations, cfg.stage2.iterations, full.mota, full.idf1, full.hota, ablated.idf1
    );
    let mut failures = Vec::new();
    if full.mota < MIN_MOTA {
        failures.push(format!("MOTA below {MIN_MOTA}"));
    }
    if full.idf1 < MIN_IDF1 {
        failures.push(format!("IDF1 below {MIN_IDF1}"));
    }
    if ablated.idf1 >= full.idf1 {
        failures.push("ablation IDF1 is not lower".into());
    }
    Ok(Outcome::from_failures(summary, failures))
}

pub fn check() -> Outcome {
    run().unwrap_or_else(Outcome::fail)
}
