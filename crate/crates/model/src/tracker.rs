//! The per-frame tracking step shared by training and inference, and the
//! sequence-level inference loop.

use querytrack_autograd::{sigmoid_f64, Graph, Tensor, Var};
use querytrack_core::geometry::{BoundingBox, LabeledBox};
use querytrack_core::io::mot::FrameBoxes;

use crate::config::{ModelConfig, TrackerConfig};
use crate::decoder::{self, DecoderOutput};
use crate::encoder::EncoderMemory;
use crate::error::{ModelError, Result};
use crate::model::{batch_tensor, encode, Model};
use crate::nn::Ctx;
use crate::queries::{self, IdentityAllocator, QueryMeta};
use crate::tan;

/// Track queries entering a frame, inside one graph.
#[derive(Clone, Debug, Default)]
pub struct TrackQueries {
    pub meta: Vec<QueryMeta>,
    /// `[T, D]`; `None` when there are no tracks.
    pub embed: Option<Var>,
    /// `[T, 4]` reference boxes.
    pub refs: Option<Var>,
}

impl TrackQueries {
    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }
}

/// Decoder result of one frame over tracks followed by detect queries.
#[derive(Clone, Debug)]
pub struct FrameDecode {
    pub meta: Vec<QueryMeta>,
    /// The query embeddings that entered the decoder.
    pub input_embed: Var,
    pub out: DecoderOutput,
    /// Final-layer logits, foreground probabilities and boxes.
    pub logits: Vec<f64>,
    pub scores: Vec<f64>,
    pub boxes: Vec<[f64; 4]>,
}

/// Concatenates track and detect queries and decodes them against `memory`.
pub fn decode_frame(ctx: &mut Ctx, cfg: &ModelConfig, memory: &EncoderMemory, tracks: &TrackQueries) -> Result<FrameDecode> {
    let (det_embed, det_refs) = decoder::detect_queries(ctx);
    let (embed, refs) = match (tracks.embed, tracks.refs) {
        (Some(e), Some(r)) if !tracks.is_empty() => (ctx.g.concat(&[e, det_embed], 0), ctx.g.concat(&[r, det_refs], 0)),
        _ => (det_embed, det_refs),
    };
    let mut meta = tracks.meta.clone();
    meta.extend(std::iter::repeat_n(QueryMeta::detect(), cfg.num_queries));
    if ctx.g.shape(embed)[0] != meta.len() {
        return Err(ModelError::Invariant("track metadata and embeddings disagree".into()));
    }
    let out = decoder::decode(ctx, cfg, embed, refs, memory)?;
    let last_logits = *out.logits.last().expect("at least one layer");
    let last_boxes = *out.boxes.last().expect("at least one layer");
    let logits = ctx.g.value(last_logits).data().to_vec();
    let scores = logits.iter().map(|&x| sigmoid_f64(x)).collect();
    let boxes = ctx
        .g
        .value(last_boxes)
        .data()
        .chunks_exact(4)
        .map(|c| [c[0], c[1], c[2], c[3]])
        .collect();
    Ok(FrameDecode {
        meta,
        input_embed: embed,
        out,
        logits,
        scores,
        boxes,
    })
}

/// Builds the next frame's track queries from `(source index, metadata)`
/// pairs: hidden states aggregated with the previous embeddings, and the
/// final refined boxes as references.
pub fn carry_tracks(
    ctx: &mut Ctx,
    cfg: &ModelConfig,
    frame: &FrameDecode,
    carried: &[(usize, QueryMeta)],
    detach_refs: bool,
) -> TrackQueries {
    if carried.is_empty() {
        return TrackQueries::default();
    }
    let rows: Vec<usize> = carried.iter().map(|c| c.0).collect();
    let hidden = ctx.g.select_rows(frame.out.hidden, &rows);
    let prev = ctx.g.select_rows(frame.input_embed, &rows);
    let embed = tan::aggregate(ctx, hidden, prev, cfg.tan_heads);
    let boxes = *frame.out.boxes.last().expect("at least one layer");
    let refs = ctx.g.select_rows(boxes, &rows);
    let refs = if detach_refs { ctx.g.detach(refs) } else { refs };
    TrackQueries {
        meta: carried.iter().map(|c| c.1).collect(),
        embed: Some(embed),
        refs: Some(refs),
    }
}

/// One reported box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackOutput {
    pub identity: u32,
    pub bbox: [f64; 4],
    pub score: f64,
}

/// Inference state of one sequence: frames must be fed in order.
pub struct SequenceTracker<'m> {
    model: &'m Model,
    cfg: TrackerConfig,
    ids: IdentityAllocator,
    meta: Vec<QueryMeta>,
    embed: Option<Tensor>,
    refs: Option<Tensor>,
}

impl<'m> SequenceTracker<'m> {
    pub fn new(model: &'m Model, cfg: TrackerConfig) -> Self {
        Self {
            model,
            cfg,
            ids: IdentityAllocator::default(),
            meta: Vec::new(),
            embed: None,
            refs: None,
        }
    }

    /// Identities allocated so far.
    pub fn allocated(&self) -> u32 {
        self.ids.allocated()
    }

    /// Live tracks carried into the next frame.
    pub fn tracks(&self) -> &[QueryMeta] {
        &self.meta
    }

    /// Processes one prepared `[3, H, W]` frame and returns the reported
    /// tracks sorted by identity.
    pub fn step(&mut self, image: &[u8]) -> Result<Vec<TrackOutput>> {
        let cfg = &self.model.config;
        let mut g = Graph::inference();
        let mut ctx = Ctx::new(&mut g, &self.model.store, false);
        let x = ctx.g.constant(batch_tensor(&[image], cfg));
        let memory = encode(&mut ctx, cfg, x)?.remove(0);
        let tracks = TrackQueries {
            meta: self.meta.clone(),
            embed: self.embed.clone().map(|t| ctx.g.constant(t)),
            refs: self.refs.clone().map(|t| ctx.g.constant(t)),
        };
        let frame = decode_frame(&mut ctx, cfg, &memory, &tracks)?;
        let survivors = queries::propagate(&frame.meta, &frame.scores, &self.cfg, &mut self.ids)?;
        let emitted = queries::emit(&survivors, &frame.scores, self.cfg.tau_emit)
            .into_iter()
            .map(|i| {
                let s = survivors[i];
                TrackOutput {
                    identity: s.meta.identity.expect("survivors are tracks"),
                    bbox: frame.boxes[s.source],
                    score: frame.scores[s.source],
                }
            })
            .collect();
        let carried: Vec<(usize, QueryMeta)> = survivors.iter().map(|s| (s.source, s.meta)).collect();
        let next = carry_tracks(&mut ctx, cfg, &frame, &carried, true);
        self.meta = next.meta;
        self.embed = next.embed.map(|v| ctx.g.value(v).clone());
        self.refs = next.refs.map(|v| ctx.g.value(v).clone());
        Ok(emitted)
    }
}

/// Tracks prepared frames in order; frame numbers start at `first_frame`.
/// Boxes are reported in pixels of an `image_w × image_h` image.
pub fn run_inference<'a>(
    model: &Model,
    cfg: &TrackerConfig,
    frames: impl IntoIterator<Item = &'a [u8]>,
    first_frame: u32,
    image_w: f64,
    image_h: f64,
) -> Result<FrameBoxes> {
    let mut tracker = SequenceTracker::new(model, cfg.clone());
    let mut out = FrameBoxes::new();
    for (k, img) in frames.into_iter().enumerate() {
        let outputs = tracker.step(img)?;
        let frame = first_frame + k as u32;
        let boxes: Vec<_> = outputs
            .iter()
            .filter_map(|o| {
                let b = BoundingBox::new(o.bbox[0], o.bbox[1], o.bbox[2], o.bbox[3]).ok()?;
                Some(LabeledBox::tracked(b.to_pixels(image_w, image_h), o.identity, o.score))
            })
            .collect();
        if !boxes.is_empty() {
            out.insert(frame, boxes);
        }
    }
    Ok(out)
}
