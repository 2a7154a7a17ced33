//! Two-stage training: single-frame detection, then clip-level tracking
//! with query propagation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use querytrack_autograd::optim::{clip_grad_norm, AdamW};
use querytrack_autograd::{BatchStats, Graph, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{LossConfig, ModelConfig, StageConfig, TrackerConfig, TrainConfig};
use crate::data::{TrainFrame, TrainSequence};
use crate::encoder::EncoderMemory;
use crate::error::{ModelError, Result};
use crate::loss::{cal_loss, frame_loss, stage1_loss, FrameLoss, LossBreakdown};
use crate::matching::tala_assign;
use crate::model::{batch_tensor, encode, load_checkpoint, save_checkpoint, Model, TrainingState};
use crate::nn::{update_running_stats, Ctx};
use crate::queries::{QueryKind, QueryMeta};
use crate::tracker::{carry_tracks, decode_frame, TrackQueries};

pub const LOG_HEADER: &str = "iteration,stage,loss,cls,l1,giou";

/// One line of the loss log. Components are normalized like the loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub stage: u8,
    pub loss: f64,
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
}

impl LogRow {
    fn new(iteration: usize, stage: u8, loss: f64, parts: &[LossBreakdown]) -> Self {
        let v = parts.iter().map(|p| p.v).sum::<usize>().max(1) as f64;
        let sum = |f: fn(&LossBreakdown) -> f64| parts.iter().map(f).sum::<f64>() / v;
        Self {
            iteration,
            stage,
            loss,
            cls: sum(|p| p.cls),
            l1: sum(|p| p.l1),
            giou: sum(|p| p.giou),
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.9},{:.9},{:.9},{:.9}",
            self.iteration, self.stage, self.loss, self.cls, self.l1, self.giou
        )
    }
}

/// Settings that drive the clip objective.
#[derive(Clone, Copy, Debug)]
pub struct ClipSettings<'a> {
    pub model: &'a ModelConfig,
    pub loss: &'a LossConfig,
    pub tracker: &'a TrackerConfig,
    pub detach_track_references: bool,
}

/// Per-frame losses of one clip decoded in order with query propagation.
///
/// Track queries carry ground-truth identities: a track stays bound to the
/// object it was promoted for, counts a miss while that object is absent and
/// is dropped once the misses exceed the tolerance. Detect queries matched to
/// newborn objects become tracks for the next frame.
pub fn clip_frame_losses(ctx: &mut Ctx, s: ClipSettings, clip: &[&TrainFrame]) -> Result<Vec<FrameLoss>> {
    let images: Vec<&[u8]> = clip.iter().map(|f| f.image.as_slice()).collect();
    let x = ctx.g.constant(batch_tensor(&images, s.model));
    let memories = encode(ctx, s.model, x)?;
    decode_clip(ctx, s, &memories, clip)
}

/// The decoding half of [`clip_frame_losses`] over precomputed memories.
pub fn decode_clip(ctx: &mut Ctx, s: ClipSettings, memories: &[EncoderMemory], clip: &[&TrainFrame]) -> Result<Vec<FrameLoss>> {
    if memories.len() != clip.len() {
        return Err(ModelError::Input(format!("{} memories for {} frames", memories.len(), clip.len())));
    }
    let mut tracks = TrackQueries::default();
    let mut out = Vec::with_capacity(clip.len());
    for (frame, memory) in clip.iter().zip(memories) {
        let fd = decode_frame(ctx, s.model, memory, &tracks)?;
        let live: BTreeMap<u32, u32> = tracks
            .meta
            .iter()
            .filter_map(|m| m.identity)
            .map(|id| (id, id))
            .collect();
        let m = tala_assign(&fd.meta, &fd.logits, &fd.boxes, &frame.gts, &live, s.loss)?;
        let gts: Vec<[f64; 4]> = frame.gts.iter().map(|g| g.bbox).collect();
        out.push(frame_loss(ctx.g, &fd.out, &m, &gts, s.loss)?);
        let mut carried = Vec::new();
        if s.tracker.propagate {
            for (i, q) in fd.meta.iter().enumerate() {
                if q.kind != QueryKind::Track {
                    continue;
                }
                let misses = if m.col_for_row(i).is_some() { 0 } else { q.miss_count.saturating_add(1) };
                if misses <= s.tracker.max_misses {
                    carried.push((i, QueryMeta::track(q.identity.expect("track"), misses)));
                }
            }
            for &(i, j) in &m.pairs {
                if fd.meta[i].kind == QueryKind::Detect {
                    carried.push((i, QueryMeta::track(frame.gts[j].identity, 0)));
                }
            }
        }
        tracks = carry_tracks(ctx, s.model, &fd, &carried, s.detach_track_references);
    }
    Ok(out)
}

/// Detection-only loss of one frame.
pub fn single_frame_loss(ctx: &mut Ctx, model: &ModelConfig, loss: &LossConfig, frame: &TrainFrame) -> Result<FrameLoss> {
    let x = ctx.g.constant(batch_tensor(&[&frame.image], model));
    let memory = encode(ctx, model, x)?.remove(0);
    let fd = decode_frame(ctx, model, &memory, &TrackQueries::default())?;
    let m = tala_assign(&fd.meta, &fd.logits, &fd.boxes, &frame.gts, &BTreeMap::new(), loss)?;
    let gts: Vec<[f64; 4]> = frame.gts.iter().map(|g| g.bbox).collect();
    frame_loss(ctx.g, &fd.out, &m, &gts, loss)
}

/// Picks `len` frames of one sequence with a random stride.
pub fn sample_clip<'a>(data: &'a [TrainSequence], len: usize, max_stride: usize, rng: &mut impl Rng) -> Result<Vec<&'a TrainFrame>> {
    let fits: Vec<&TrainSequence> = data.iter().filter(|s| s.len() >= len).collect();
    if fits.is_empty() || len == 0 {
        return Err(ModelError::Input(format!("no sequence has {len} frames")));
    }
    let seq = fits[rng.random_range(0..fits.len())];
    let widest = if len > 1 { ((seq.len() - 1) / (len - 1)).min(max_stride) } else { 1 };
    let stride = rng.random_range(1..=widest.max(1));
    let span = (len - 1) * stride;
    let start = rng.random_range(0..seq.len() - span);
    Ok((0..len).map(|k| &seq.frames[start + k * stride]).collect())
}

/// Picks one frame uniformly over all sequences.
pub fn sample_frame<'a>(data: &'a [TrainSequence], rng: &mut impl Rng) -> Result<&'a TrainFrame> {
    let total: usize = data.iter().map(TrainSequence::len).sum();
    if total == 0 {
        return Err(ModelError::Input("empty training set".into()));
    }
    let mut k = rng.random_range(0..total);
    for s in data {
        if k < s.len() {
            return Ok(&s.frames[k]);
        }
        k -= s.len();
    }
    unreachable!("index within total")
}

/// Model, optimizer and schedule position of one training stage.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: AdamW,
    /// Iterations completed in this stage.
    pub iteration: usize,
}

impl Trainer {
    /// Fresh weights for stage 1, the stage-1 checkpoint for stage 2, or the
    /// full state of `resume` when set.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let stage = config.stage_config().clone();
        let mut optimizer = AdamW::new(stage.lr, stage.weight_decay);
        let mut iteration = 0;
        let model = if let Some(path) = &config.resume {
            let ck = load_checkpoint(path, Some(&config.model))?;
            let (ts, step, m, v) = ck
                .state
                .ok_or_else(|| ModelError::Checkpoint(format!("{}: no training state", path.display())))?;
            if ts.stage != config.stage {
                return Err(ModelError::Checkpoint(format!(
                    "{}: written in stage {}, configuration is stage {}",
                    path.display(),
                    ts.stage,
                    config.stage
                )));
            }
            optimizer.restore(step, m, v);
            iteration = ts.iteration;
            ck.model
        } else if config.stage == 2 {
            let path = config.stage1_checkpoint.as_ref().expect("validated");
            load_checkpoint(path, Some(&config.model))?.model
        } else {
            Model::new(config.model.clone(), config.seed)?
        };
        Ok(Self {
            config,
            model,
            optimizer,
            iteration,
        })
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (self.config.stage as u64) << 56);
        rng.set_stream(self.iteration as u64);
        rng
    }

    fn apply(&mut self, g: &Graph, loss: Var, value: f64, stats: &[(String, BatchStats)]) -> Result<()> {
        if !value.is_finite() {
            return Err(ModelError::Diverged {
                iteration: self.iteration,
                loss: value,
            });
        }
        let stage = self.config.stage_config();
        let grads = g.backward(loss);
        let (clipped, norm) = clip_grad_norm(&grads, stage.grad_clip);
        if !norm.is_finite() {
            return Err(ModelError::Diverged {
                iteration: self.iteration,
                loss: norm,
            });
        }
        self.optimizer.lr = stage.lr_at(self.iteration);
        self.optimizer.step(&mut self.model.store, &clipped);
        update_running_stats(&mut self.model.store, stats);
        self.iteration += 1;
        Ok(())
    }

    /// One optimizer step on the detection loss of `frame`.
    pub fn stage1_step(&mut self, frame: &TrainFrame) -> Result<LogRow> {
        let mut g = Graph::new();
        let (loss, value, stats, parts) = {
            let mut ctx = Ctx::new(&mut g, &self.model.store, true);
            let f = single_frame_loss(&mut ctx, &self.config.model, &self.config.loss, frame)?;
            let loss = stage1_loss(ctx.g, &f);
            let value = ctx.g.value(loss).item();
            (loss, value, std::mem::take(&mut ctx.bn_stats), [f.breakdown])
        };
        let row = LogRow::new(self.iteration, 1, value, &parts);
        self.apply(&g, loss, value, &stats)?;
        Ok(row)
    }

    /// One optimizer step on the clip objective; no update happens mid-clip.
    pub fn stage2_step(&mut self, clip: &[&TrainFrame]) -> Result<LogRow> {
        let stage = self.config.stage_config().clone();
        let mut g = Graph::new();
        let (loss, value, stats, parts) = {
            let mut ctx = Ctx::new(&mut g, &self.model.store, true);
            let settings = ClipSettings {
                model: &self.config.model,
                loss: &self.config.loss,
                tracker: &self.config.tracker,
                detach_track_references: stage.detach_track_references,
            };
            let frames = clip_frame_losses(&mut ctx, settings, clip)?;
            let loss = cal_loss(ctx.g, &frames, stage.clip_len)?;
            let value = ctx.g.value(loss).item();
            let parts: Vec<LossBreakdown> = frames.iter().map(|f| f.breakdown).collect();
            (loss, value, std::mem::take(&mut ctx.bn_stats), parts)
        };
        let row = LogRow::new(self.iteration, 2, value, &parts);
        self.apply(&g, loss, value, &stats)?;
        Ok(row)
    }

    /// One iteration on data sampled from the iteration's own random stream.
    pub fn step(&mut self, data: &[TrainSequence]) -> Result<LogRow> {
        let mut rng = self.rng();
        if self.config.stage == 1 {
            let f = sample_frame(data, &mut rng)?;
            self.stage1_step(f)
        } else {
            let s = self.config.stage_config();
            let clip = sample_clip(data, s.clip_len, s.max_stride, &mut rng)?;
            self.stage2_step(&clip)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let state = TrainingState {
            stage: self.config.stage,
            iteration: self.iteration,
        };
        save_checkpoint(path, &self.model, Some((&state, &self.optimizer)))
    }

    /// Runs the remaining iterations of the stage, logging every one and
    /// checkpointing periodically and at the end.
    pub fn run(&mut self, data: &[TrainSequence], checkpoint: Option<&Path>, log: &mut dyn Write) -> Result<Vec<LogRow>> {
        let stage = self.config.stage_config().clone();
        let mut rows = Vec::new();
        while self.iteration < stage.iterations {
            let row = self.step(data)?;
            writeln!(log, "{}", row.to_csv()).map_err(|e| ModelError::Input(format!("loss log: {e}")))?;
            log::debug!("stage {} iteration {}: loss {:.6}", row.stage, row.iteration, row.loss);
            rows.push(row);
            if let Some(path) = checkpoint {
                if stage.checkpoint_every > 0 && self.iteration % stage.checkpoint_every == 0 {
                    self.save(path)?;
                }
            }
        }
        if let Some(path) = checkpoint {
            self.save(path)?;
        }
        Ok(rows)
    }
}

impl TrainConfig {
    /// Schedule of the configured stage.
    pub fn stage_config(&self) -> &StageConfig {
        if self.stage == 1 {
            &self.stage1
        } else {
            &self.stage2
        }
    }
}
