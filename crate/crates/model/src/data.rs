//! Training sequences: frames prepared at network resolution with their
//! normalized ground truth.

use std::ops::RangeInclusive;

use querytrack_core::io::dataset::MotSequence;
use querytrack_core::io::image::RgbImage;
use querytrack_core::io::mot::GtRecord;
use querytrack_core::io::split::SequenceHalf;
use querytrack_core::io::synthetic::{SceneSampler, SyntheticScene};
use querytrack_core::DataError;

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::matching::GtObject;
use crate::model::prepare_image;

#[derive(Clone, Debug)]
pub struct TrainFrame {
    /// Frame number in the source sequence.
    pub frame: u32,
    /// `[3, H, W]` bytes at network resolution.
    pub image: Vec<u8>,
    /// Evaluated ground truth sorted by identity.
    pub gts: Vec<GtObject>,
}

#[derive(Clone, Debug)]
pub struct TrainSequence {
    pub name: String,
    /// Source image size in pixels.
    pub width: u32,
    pub height: u32,
    pub frames: Vec<TrainFrame>,
}

/// Evaluated records of one frame as normalized boxes.
pub fn gt_objects<'a>(records: impl IntoIterator<Item = &'a GtRecord>, width: u32, height: u32) -> Vec<GtObject> {
    let mut out: Vec<GtObject> = records
        .into_iter()
        .filter(|r| r.is_evaluated())
        .filter_map(|r| {
            let b = r.bbox.to_normalized(width as f64, height as f64).ok()?;
            Some(GtObject {
                identity: r.id,
                bbox: b.to_array(),
            })
        })
        .collect();
    out.sort_by_key(|g| g.identity);
    out
}

impl TrainSequence {
    /// Builds frames `range` from a frame loader and unfiltered records.
    pub fn build(
        name: impl Into<String>,
        width: u32,
        height: u32,
        range: RangeInclusive<u32>,
        records: &[GtRecord],
        cfg: &ModelConfig,
        mut load: impl FnMut(u32) -> std::result::Result<RgbImage, DataError>,
    ) -> Result<Self> {
        let name = name.into();
        let mut frames = Vec::new();
        for f in range {
            let img = load(f)?;
            if img.width != width || img.height != height {
                return Err(ModelError::Input(format!(
                    "{name}: frame {f} is {}x{}, sequence declares {width}x{height}",
                    img.width, img.height
                )));
            }
            frames.push(TrainFrame {
                frame: f,
                image: prepare_image(&img, cfg),
                gts: gt_objects(records.iter().filter(|r| r.frame == f), width, height),
            });
        }
        if frames.is_empty() {
            return Err(ModelError::Input(format!("{name}: no frames")));
        }
        Ok(Self {
            name,
            width,
            height,
            frames,
        })
    }

    pub fn from_mot(seq: &MotSequence, cfg: &ModelConfig) -> Result<Self> {
        let i = &seq.info;
        Self::build(&i.name, i.im_width, i.im_height, 1..=i.seq_length, &seq.gt, cfg, |f| seq.load_frame(f))
    }

    /// One half of a split sequence with its rebased identities.
    pub fn from_half(seq: &MotSequence, half: &SequenceHalf, cfg: &ModelConfig) -> Result<Self> {
        let i = &seq.info;
        Self::build(&i.name, i.im_width, i.im_height, half.frames.clone(), &half.gt, cfg, |f| seq.load_frame(f))
    }

    /// Renders a synthetic scene in memory.
    pub fn from_synthetic(scene: &SyntheticScene, cfg: &ModelConfig) -> Result<Self> {
        let s = scene.generate()?;
        let gt = s.ground_truth();
        Self::build(&scene.name, scene.width, scene.height, 1..=scene.frames, &gt, cfg, |f| Ok(s.render(f)))
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Training and held-out counts of the default synthetic benchmark.
pub const BENCHMARK_TRAIN: usize = 12;
pub const BENCHMARK_EVAL: usize = 8;

/// The default synthetic benchmark: `(train scenes, held-out scenes)`, all
/// derived from `seed`.
pub fn synthetic_benchmark(sampler: &SceneSampler, seed: u64) -> (Vec<SyntheticScene>, Vec<SyntheticScene>) {
    let base = seed.wrapping_mul(1_000_003);
    let train = (0..BENCHMARK_TRAIN)
        .map(|i| sampler.sample(format!("synth-train-{i:02}"), base.wrapping_add(i as u64)))
        .collect();
    let eval = (0..BENCHMARK_EVAL)
        .map(|i| sampler.sample(format!("synth-eval-{i:02}"), base.wrapping_add(500 + i as u64)))
        .collect();
    (train, eval)
}
