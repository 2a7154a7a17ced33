//! MOT17 plumbing: half split, parsing, tracking and evaluation end to end.
//! Uses `$MOT17_DIR` (a MOT17 `train` directory) when set, otherwise a
//! MOT17-shaped fixture with JPEG frames.

use std::path::{Path, PathBuf};

use querytrack_core::io::dataset::MotSequence;
use querytrack_core::io::mot::{format_gt, group_gt, parse_results, write_results};
use querytrack_core::io::split::half_split;
use querytrack_core::io::synthetic::SceneSampler;
use querytrack_core::metrics::{evaluate_sequence, MetricReport, SequenceEval, SequenceMetrics};
use querytrack_model::model::{prepare_image, Model};
use querytrack_model::tracker::run_inference;
use querytrack_model::{ModelConfig, TrackerConfig};

use crate::Outcome;

pub const ENV: &str = "MOT17_DIR";
const FIXTURE_SEQUENCES: [&str; 2] = ["MOT17-02-FRCNN", "MOT17-04-FRCNN"];

/// Writes MOTChallenge sequences with `.jpg` frames and mixed-class ground
/// truth under `root`.
pub fn write_fixture(root: &Path) -> Result<(), String> {
    let sampler = SceneSampler {
        width: 480,
        height: 270,
        frames: 20,
        ..SceneSampler::default()
    };
    for (k, name) in FIXTURE_SEQUENCES.iter().enumerate() {
        let scene = sampler.sample(*name, 17 + k as u64);
        let s = scene.generate().map_err(|e| e.to_string())?;
        let mut desc = s.descriptor();
        desc.im_ext = ".jpg".into();
        let dir = root.join(name);
        desc.save(&dir.join("seqinfo.ini")).map_err(|e| e.to_string())?;
        std::fs::create_dir_all(dir.join(&desc.im_dir)).map_err(|e| e.to_string())?;
        for f in 1..=scene.frames {
            let img = s.render(f);
            let buf = image::RgbImage::from_raw(img.width, img.height, img.data).ok_or("frame size")?;
            buf.save(dir.join(&desc.im_dir).join(desc.frame_file(f)))
                .map_err(|e| e.to_string())?;
        }
        let mut gt = s.ground_truth();
        // a static non-pedestrian record the evaluation filter must drop
        if let Some(mut extra) = gt.first().copied() {
            extra.id = 999;
            extra.class = 7;
            gt.push(extra);
        }
        std::fs::create_dir_all(dir.join("gt")).map_err(|e| e.to_string())?;
        std::fs::write(dir.join("gt").join("gt.txt"), format_gt(&gt)).map_err(|e| e.to_string())?;
    }
    Ok(())
}

/// Tracks the evaluation half of every sequence under `root` and scores it
/// through written and re-parsed results files.
pub fn run_pipeline(root: &Path, model: &Model, results_dir: &Path) -> Result<Vec<MetricReport>, String> {
    let seqs = MotSequence::list(root).map_err(|e| e.to_string())?;
    if seqs.is_empty() {
        return Err(format!("no sequences under {}", root.display()));
    }
    let mut parts = Vec::new();
    for seq in &seqs {
        let (_, eval) = half_split(seq.info.seq_length, &seq.gt).map_err(|e| e.to_string())?;
        let mut frames = Vec::new();
        for f in eval.frames.clone() {
            frames.push(prepare_image(&seq.load_frame(f).map_err(|e| e.to_string())?, &model.config));
        }
        let (w, h) = (seq.info.im_width as f64, seq.info.im_height as f64);
        let first = *eval.frames.start();
        let pred = run_inference(model, &TrackerConfig::default(), frames.iter().map(Vec::as_slice), first, w, h)
            .map_err(|e| e.to_string())?;
        let path = results_dir.join(format!("{}.txt", seq.name()));
        write_results(&path, &pred).map_err(|e| e.to_string())?;
        let parsed = parse_results(&path).map_err(|e| e.to_string())?;
        let ev = SequenceEval::new(seq.name(), first, *eval.frames.end(), &group_gt(&eval.gt), &parsed)
            .map_err(|e| e.to_string())?;
        parts.push(evaluate_sequence(&ev));
    }
    let mut reports = Vec::new();
    for p in &parts {
        reports.push(p.report().map_err(|e| e.to_string())?);
    }
    reports.push(SequenceMetrics::combined("COMBINED", &parts).report().map_err(|e| e.to_string())?);
    Ok(reports)
}

fn complete(r: &MetricReport) -> bool {
    [r.hota, r.deta, r.assa, r.idf1, r.mota].iter().all(|v| v.is_finite())
}

fn run() -> Result<Outcome, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (root, source): (PathBuf, String) = match std::env::var_os(ENV) {
        Some(dir) => (PathBuf::from(&dir), format!("{ENV}={}", Path::new(&dir).display())),
        None => {
            let root = tmp.path().join("train");
            write_fixture(&root)?;
            (root, format!("JPEG fixture ({ENV} unset)"))
        }
    };
    let results = tmp.path().join("results");
    std::fs::create_dir_all(&results).map_err(|e| e.to_string())?;
    let model = Model::new(ModelConfig::micro(), 0).map_err(|e| e.to_string())?;
    let reports = run_pipeline(&root, &model, &results)?;
    let rows = reports.len();
    let table = MetricReport::to_csv(&reports);
    let header_ok = table.lines().next().is_some_and(|h| h.split(',').count() == 10);
    let summary = format!("{source}: {} sequences, {rows} report rows", rows - 1);
    if reports.iter().all(complete) && header_ok {
        Ok(Outcome::pass(summary))
    } else {
        Ok(Outcome::fail(format!("{summary}; incomplete report")))
    }
}

pub fn check() -> Outcome {
    run().unwrap_or_else(Outcome::fail)
}
