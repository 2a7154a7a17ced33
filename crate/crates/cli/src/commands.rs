use std::fs;
use std::io::{BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use querytrack_core::geometry::{BoundingBox, LabeledBox};
use querytrack_core::io::dataset::MotSequence;
use querytrack_core::io::image::identity_color;
use querytrack_core::io::mot::{group_gt, parse_results, write_results, FrameBoxes, GtRecord};
use querytrack_core::io::split::half_split;
use querytrack_core::io::synthetic::SceneSampler;
use querytrack_core::metrics::{evaluate_sequence, MetricReport, SequenceEval, SequenceMetrics};
use querytrack_core::{DataError, MetricError};
use querytrack_model::data::{synthetic_benchmark, TrainSequence};
use querytrack_model::model::{load_checkpoint, prepare_image};
use querytrack_model::train::{Trainer, LOG_HEADER};
use querytrack_model::tracker::SequenceTracker;
use querytrack_model::{ModelError, TrackerConfig, TrainConfig};
use serde::Serialize;

use crate::{ConfigArgs, EvalArgs, OverlayArgs, Part, SynthArgs, TrackArgs, TrainArgs};

/// Name of the resolved-configuration snapshot written beside outputs.
pub const SNAPSHOT: &str = "config.toml";

/// Bad input the user can fix: a missing file, malformed data or configuration.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

/// 1 for input and configuration errors, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<InputError>() || cause.is::<DataError>() || cause.is::<MetricError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return match e {
                ModelError::Config(_) | ModelError::Data(_) | ModelError::Checkpoint(_) | ModelError::Input(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_snapshot(dir: &Path, value: &impl Serialize) -> Result<()> {
    let text = toml::to_string(value).context("serializing configuration snapshot")?;
    write_file(&dir.join(SNAPSHOT), text)
}

fn resolve_config(args: &ConfigArgs) -> Result<TrainConfig> {
    Ok(match &args.config {
        Some(path) => {
            if !path.is_file() {
                return Err(input(format!("configuration file {} not found", path.display())));
            }
            TrainConfig::load(path, &args.overrides)?
        }
        None => TrainConfig::from_toml("", &args.overrides)?,
    })
}

fn open_sequences(root: &Path) -> Result<Vec<MotSequence>> {
    if !root.is_dir() {
        return Err(input(format!("dataset directory {} not found", root.display())));
    }
    let seqs = MotSequence::list(root)?;
    if seqs.is_empty() {
        return Err(input(format!("{} contains no sequence with a seqinfo.ini", root.display())));
    }
    Ok(seqs)
}

/// Frame range and ground truth of the selected part of a sequence.
fn select_part(seq: &MotSequence, part: Part) -> Result<(RangeInclusive<u32>, Vec<GtRecord>)> {
    let n = seq.info.seq_length;
    Ok(match part {
        Part::All => (1..=n, seq.gt.clone()),
        Part::First | Part::Second => {
            let (a, b) = half_split(n, &seq.gt).with_context(|| seq.name().to_string())?;
            let h = if part == Part::First { a } else { b };
            (h.frames, h.gt)
        }
    })
}

#[derive(Serialize)]
struct SynthSnapshot {
    seed: u64,
    side: u32,
    frames: u32,
    train_sequences: Vec<String>,
    eval_sequences: Vec<String>,
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    if a.side < 32 || a.frames < 2 {
        return Err(input("synth needs --side >= 32 and --frames >= 2"));
    }
    let sampler = SceneSampler {
        frames: a.frames,
        ..SceneSampler::with_side(a.side)
    };
    let (train, eval) = synthetic_benchmark(&sampler, a.seed);
    for (sub, scenes) in [("train", &train), ("eval", &eval)] {
        let root = a.out.join(sub);
        create_dir(&root)?;
        for scene in scenes.iter() {
            let dir = scene.generate()?.write_mot(&root)?;
            log::info!("wrote {}", dir.display());
        }
    }
    write_snapshot(
        &a.out,
        &SynthSnapshot {
            seed: a.seed,
            side: a.side,
            frames: a.frames,
            train_sequences: train.iter().map(|s| s.name.clone()).collect(),
            eval_sequences: eval.iter().map(|s| s.name.clone()).collect(),
        },
    )
}

#[derive(Serialize)]
struct TrainSnapshot<'a> {
    data: &'a Path,
    part: Part,
    #[serde(flatten)]
    config: &'a TrainConfig,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let config = resolve_config(&a.config)?;
    let seqs = open_sequences(&a.data)?;
    create_dir(&a.out)?;
    write_snapshot(
        &a.out,
        &TrainSnapshot {
            data: &a.data,
            part: a.part,
            config: &config,
        },
    )?;
    let mut data = Vec::with_capacity(seqs.len());
    for seq in &seqs {
        let (range, gt) = select_part(seq, a.part)?;
        let i = &seq.info;
        let s = TrainSequence::build(&i.name, i.im_width, i.im_height, range, &gt, &config.model, |f| {
            seq.load_frame(f)
        })?;
        log::info!("loaded {} ({} frames)", s.name, s.len());
        data.push(s);
    }
    let stage = config.stage;
    let mut trainer = Trainer::new(config)?;
    log::info!(
        "stage {stage}: {} parameters, starting at iteration {}",
        trainer.model.num_parameters(),
        trainer.iteration
    );
    let log_path = a.out.join(format!("loss_stage{stage}.csv"));
    let resumed = trainer.iteration > 0 && log_path.is_file();
    let file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(resumed)
        .truncate(!resumed)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = BufWriter::new(file);
    if !resumed {
        writeln!(log, "{LOG_HEADER}")?;
    }
    let checkpoint = a.out.join(format!("stage{stage}.ckpt"));
    let rows = trainer.run(&data, Some(&checkpoint), &mut log)?;
    log.flush()?;
    if let Some(last) = rows.last() {
        log::info!("stage {stage} finished at iteration {}: loss {:.4}", trainer.iteration, last.loss);
    }
    log::info!("checkpoint {}", checkpoint.display());
    Ok(())
}

#[derive(Serialize)]
struct TrackSnapshot<'a> {
    checkpoint: &'a Path,
    data: &'a Path,
    part: Part,
    tracker: &'a TrackerConfig,
}

/// Tracks frames `range` of one sequence; boxes are in source pixels.
fn track_sequence(
    seq: &MotSequence,
    range: RangeInclusive<u32>,
    tracker: &mut SequenceTracker<'_>,
    model_cfg: &querytrack_model::ModelConfig,
) -> Result<FrameBoxes> {
    let (w, h) = (seq.info.im_width as f64, seq.info.im_height as f64);
    let mut out = FrameBoxes::new();
    for f in range {
        let img = seq.load_frame(f)?;
        let outputs = tracker.step(&prepare_image(&img, model_cfg))?;
        let boxes: Vec<_> = outputs
            .iter()
            .filter_map(|o| {
                let b = BoundingBox::new(o.bbox[0], o.bbox[1], o.bbox[2], o.bbox[3]).ok()?;
                Some(LabeledBox::tracked(b.to_pixels(w, h), o.identity, o.score))
            })
            .collect();
        if !boxes.is_empty() {
            out.insert(f, boxes);
        }
    }
    Ok(out)
}

pub fn track(a: &TrackArgs) -> Result<()> {
    let config = resolve_config(&a.config)?;
    if !a.checkpoint.is_file() {
        return Err(input(format!("checkpoint {} not found", a.checkpoint.display())));
    }
    let model = load_checkpoint(&a.checkpoint, None)?.model;
    let seqs = open_sequences(&a.data)?;
    create_dir(&a.out)?;
    write_snapshot(
        &a.out,
        &TrackSnapshot {
            checkpoint: &a.checkpoint,
            data: &a.data,
            part: a.part,
            tracker: &config.tracker,
        },
    )?;
    for seq in &seqs {
        let (range, _) = select_part(seq, a.part)?;
        let mut tracker = SequenceTracker::new(&model, config.tracker.clone());
        let boxes = track_sequence(seq, range, &mut tracker, &model.config)?;
        let path = a.out.join(format!("{}.txt", seq.name()));
        write_results(&path, &boxes)?;
        log::info!("{}: {} identities -> {}", seq.name(), tracker.allocated(), path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalSnapshot<'a> {
    gt: &'a Path,
    results: &'a Path,
    part: Part,
}

/// Row name of the all-sequence aggregate.
pub const COMBINED: &str = "COMBINED";

pub fn eval(a: &EvalArgs) -> Result<()> {
    let seqs = open_sequences(&a.gt)?;
    if !a.results.is_dir() {
        return Err(input(format!("results directory {} not found", a.results.display())));
    }
    let mut parts: Vec<SequenceMetrics> = Vec::new();
    for seq in &seqs {
        let (range, gt) = select_part(seq, a.part)?;
        let path = a.results.join(format!("{}.txt", seq.name()));
        if !path.is_file() {
            return Err(input(format!("results file {} not found", path.display())));
        }
        let mut pred = parse_results(&path)?;
        if a.part != Part::All {
            pred.retain(|f, _| range.contains(f));
        }
        let ev = SequenceEval::new(seq.name(), *range.start(), *range.end(), &group_gt(&gt), &pred)
            .with_context(|| format!("evaluating {}", path.display()))?;
        parts.push(evaluate_sequence(&ev));
    }
    let mut rows = Vec::with_capacity(parts.len() + 1);
    for p in &parts {
        rows.push(p.report()?);
    }
    rows.push(SequenceMetrics::combined(COMBINED, &parts).report()?);
    let text = MetricReport::to_text(&rows);
    print!("{text}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_snapshot(
            out,
            &EvalSnapshot {
                gt: &a.gt,
                results: &a.results,
                part: a.part,
            },
        )?;
        write_file(&out.join("metrics.txt"), &text)?;
        write_file(&out.join("metrics.csv"), MetricReport::to_csv(&rows))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct OverlaySnapshot<'a> {
    sequence: &'a Path,
    results: &'a Path,
    thickness: u32,
}

pub fn overlay(a: &OverlayArgs) -> Result<()> {
    if !a.sequence.join("seqinfo.ini").is_file() {
        return Err(input(format!("{} is not a sequence directory", a.sequence.display())));
    }
    if !a.results.is_file() {
        return Err(input(format!("results file {} not found", a.results.display())));
    }
    if a.thickness == 0 {
        bail!(input("--thickness must be positive"));
    }
    let seq = MotSequence::open(&a.sequence)?;
    let results = parse_results(&a.results)?;
    if let Some(&f) = results.keys().find(|&&f| f < 1 || f > seq.info.seq_length) {
        return Err(input(format!(
            "{}: frame {f} outside 1..={}",
            a.results.display(),
            seq.info.seq_length
        )));
    }
    create_dir(&a.out)?;
    write_snapshot(
        &a.out,
        &OverlaySnapshot {
            sequence: &a.sequence,
            results: &a.results,
            thickness: a.thickness,
        },
    )?;
    for f in 1..=seq.info.seq_length {
        let mut img = seq.load_frame(f)?;
        for b in results.get(&f).into_iter().flatten() {
            let color = identity_color(b.identity.unwrap_or(0));
            let p = b.bbox;
            img.draw_rect(p.left, p.top, p.width, p.height, color, a.thickness);
        }
        let path: PathBuf = a.out.join(format!("{f:06}.ppm"));
        img.save_ppm(&path)?;
    }
    log::info!("wrote {} frames to {}", seq.info.seq_length, a.out.display());
    Ok(())
}
