//! Deformable-attention decoder with iterative box refinement.

use std::f64::consts::PI;

use querytrack_autograd::{inverse_sigmoid_f64, Tensor, Var};

use crate::config::ModelConfig;
use crate::encoder::EncoderMemory;
use crate::error::{ModelError, Result};
use crate::nn::{Ctx, Init};

pub const INVERSE_SIGMOID_EPS: f64 = 1e-5;
/// Initial foreground probability of every query.
pub const PRIOR_PROB: f64 = 0.01;

/// Per-layer predictions for one query set.
#[derive(Clone, Debug)]
pub struct DecoderOutput {
    /// `[Q]` foreground logits per layer.
    pub logits: Vec<Var>,
    /// `[Q, 4]` boxes `(cx, cy, w, h)` in `(0, 1)` per layer.
    pub boxes: Vec<Var>,
    /// `[Q, D]` final-layer hidden states.
    pub hidden: Var,
}

impl DecoderOutput {
    pub fn num_layers(&self) -> usize {
        self.logits.len()
    }
}

fn init_offsets_bias(heads: usize, levels: usize, points: usize) -> Tensor {
    let mut data = Vec::with_capacity(heads * levels * points * 2);
    for h in 0..heads {
        let theta = h as f64 * 2.0 * PI / heads as f64;
        let (c, s) = (theta.cos(), theta.sin());
        let m = c.abs().max(s.abs());
        for _ in 0..levels {
            for p in 0..points {
                let k = (p + 1) as f64;
                data.push(c / m * k);
                data.push(s / m * k);
            }
        }
    }
    Tensor::from_vec(&[heads * levels * points * 2], data)
}

pub fn init(init: &mut Init, cfg: &ModelConfig) {
    let d = cfg.hidden_dim;
    let (h, k) = (cfg.decoder_heads, cfg.sampling_points);
    let levels = 3;
    init.linear("decoder.query_pos.fc1", 4, 2 * d);
    init.linear("decoder.query_pos.fc2", 2 * d, d);
    let prior_bias = -((1.0 - PRIOR_PROB) / PRIOR_PROB).ln();
    for l in 0..cfg.decoder_layers {
        let p = format!("decoder.l{l}");
        init.attention(&format!("{p}.self_attn"), d);
        init.layer_norm(&format!("{p}.ln1"), d);
        init.linear(&format!("{p}.cross.value"), d, d);
        init.linear_zero(&format!("{p}.cross.offsets"), d, h * levels * k * 2);
        init.tensor(&format!("{p}.cross.offsets.b"), init_offsets_bias(h, levels, k));
        init.linear_zero(&format!("{p}.cross.weights"), d, h * levels * k);
        init.linear(&format!("{p}.cross.out"), d, d);
        init.layer_norm(&format!("{p}.ln2"), d);
        init.ffn(&format!("{p}.ffn"), d, d * cfg.ffn_ratio);
        init.layer_norm(&format!("{p}.ln3"), d);
        init.linear(&format!("{p}.cls"), d, 1);
        init.tensor(&format!("{p}.cls.b"), Tensor::full(&[1], prior_bias));
        init.linear(&format!("{p}.box.fc1"), d, d);
        init.linear(&format!("{p}.box.fc2"), d, d);
        init.linear_zero(&format!("{p}.box.fc3"), d, 4);
    }
    // learnable detect queries: embeddings and reference boxes in logit space
    let nq = cfg.num_queries;
    let embed = init.rng.uniform(&[nq, d], 1.0);
    init.tensor("decoder.query.embed", embed);
    let mut refs = Vec::with_capacity(nq * 4);
    for _ in 0..nq {
        let cx = 0.05 + 0.9 * init.rng.unit();
        let cy = 0.05 + 0.9 * init.rng.unit();
        for v in [cx, cy, 0.1, 0.1] {
            refs.push(inverse_sigmoid_f64(v, INVERSE_SIGMOID_EPS));
        }
    }
    init.tensor("decoder.query.ref", Tensor::from_vec(&[nq, 4], refs));
}

/// Fresh detect queries: `(embeddings [Nq, D], reference boxes [Nq, 4])`.
/// Identical at every frame until they interact with the image.
pub fn detect_queries(ctx: &mut Ctx) -> (Var, Var) {
    let embed = ctx.p("decoder.query.embed");
    let logits = ctx.p("decoder.query.ref");
    let refs = ctx.g.sigmoid(logits);
    (embed, refs)
}

fn mlp2(ctx: &mut Ctx, name: &str, x: Var) -> Var {
    let h = ctx.linear(&format!("{name}.fc1"), x);
    let h = ctx.g.relu(h);
    ctx.linear(&format!("{name}.fc2"), h)
}

/// Multi-scale deformable attention of `query [Q, D]` into `memory`, sampling
/// around each reference box with offsets scaled by the box size.
pub fn ms_deform_attn(
    ctx: &mut Ctx,
    name: &str,
    query: Var,
    refs: Var,
    memory: &EncoderMemory,
    heads: usize,
    points: usize,
) -> Var {
    let q = ctx.g.shape(query)[0];
    let s = ctx.g.shape(memory.values)[0];
    let d = ctx.g.shape(memory.values)[1];
    let levels = memory.layout.num_levels();
    let value = ctx.linear(&format!("{name}.value"), memory.values);
    let value = ctx.g.reshape(value, &[s, heads, d / heads]);
    let off = ctx.linear(&format!("{name}.offsets"), query);
    let off = ctx.g.reshape(off, &[q, heads, levels, points, 2]);
    let w = ctx.linear(&format!("{name}.weights"), query);
    let w = ctx.g.reshape(w, &[q, heads, levels * points]);
    let w = ctx.g.softmax(w);
    let w = ctx.g.reshape(w, &[q, heads, levels, points]);
    let g = &mut *ctx.g;
    let xy = g.narrow(refs, 1, 0, 2);
    let xy = g.reshape(xy, &[q, 1, 1, 1, 2]);
    let wh = g.narrow(refs, 1, 2, 2);
    let wh = g.reshape(wh, &[q, 1, 1, 1, 2]);
    let wh = g.scale(wh, 0.5 / points as f64);
    let delta = g.mul(off, wh);
    let loc = g.add(delta, xy);
    let sampled = g.ms_deform_sample(value, &memory.layout, loc, w);
    ctx.linear(&format!("{name}.out"), sampled)
}

fn check_refs(ctx: &Ctx, refs: Var) -> Result<()> {
    if ctx.g.value(refs).data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(ModelError::Input("reference boxes must lie inside the unit square".into()));
    }
    Ok(())
}

/// Runs every decoder layer. `embed: [Q, D]`, `refs: [Q, 4]` in `[0, 1]`.
pub fn decode(ctx: &mut Ctx, cfg: &ModelConfig, embed: Var, refs: Var, memory: &EncoderMemory) -> Result<DecoderOutput> {
    check_refs(ctx, refs)?;
    let q = ctx.g.shape(embed)[0];
    if q == 0 {
        let d = cfg.hidden_dim;
        let n = cfg.decoder_layers;
        let logits = (0..n).map(|_| ctx.g.constant(Tensor::zeros(&[0]))).collect();
        let boxes = (0..n).map(|_| ctx.g.constant(Tensor::zeros(&[0, 4]))).collect();
        let hidden = ctx.g.constant(Tensor::zeros(&[0, d]));
        return Ok(DecoderOutput { logits, boxes, hidden });
    }
    let mut tgt = embed;
    let mut reference = refs;
    let mut logits = Vec::with_capacity(cfg.decoder_layers);
    let mut boxes = Vec::with_capacity(cfg.decoder_layers);
    for l in 0..cfg.decoder_layers {
        let p = format!("decoder.l{l}");
        let pos = mlp2(ctx, "decoder.query_pos", reference);
        let qk = ctx.g.add(tgt, pos);
        let sa = ctx.attention(&format!("{p}.self_attn"), qk, qk, tgt, cfg.decoder_heads);
        let x = ctx.g.add(tgt, sa);
        tgt = ctx.layer_norm(&format!("{p}.ln1"), x);

        let qc = ctx.g.add(tgt, pos);
        let ca = ms_deform_attn(
            ctx,
            &format!("{p}.cross"),
            qc,
            reference,
            memory,
            cfg.decoder_heads,
            cfg.sampling_points,
        );
        let x = ctx.g.add(tgt, ca);
        tgt = ctx.layer_norm(&format!("{p}.ln2"), x);

        let f = ctx.ffn(&format!("{p}.ffn"), tgt);
        let x = ctx.g.add(tgt, f);
        tgt = ctx.layer_norm(&format!("{p}.ln3"), x);

        let h = ctx.linear(&format!("{p}.box.fc1"), tgt);
        let h = ctx.g.relu(h);
        let h = ctx.linear(&format!("{p}.box.fc2"), h);
        let h = ctx.g.relu(h);
        let delta = ctx.linear(&format!("{p}.box.fc3"), h);
        let base = ctx.g.inverse_sigmoid(reference, INVERSE_SIGMOID_EPS);
        let z = ctx.g.add(base, delta);
        let refined = ctx.g.sigmoid(z);

        let logit = ctx.linear(&format!("{p}.cls"), tgt);
        logits.push(ctx.g.reshape(logit, &[q]));
        boxes.push(refined);
        reference = if cfg.detach_layer_references {
            ctx.g.detach(refined)
        } else {
            refined
        };
    }
    Ok(DecoderOutput {
        logits,
        boxes,
        hidden: tgt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use querytrack_autograd::{init::Initializer, Graph, LevelLayout, ParamStore};

    fn identity(d: usize) -> Tensor {
        let mut t = Tensor::zeros(&[d, d]);
        for i in 0..d {
            t.set(&[i, i], 1.0);
        }
        t
    }

    /// Single-level memory with identity value/output projections.
    fn lattice_setup(h: usize, w: usize, d: usize, points: usize) -> (ParamStore, Tensor) {
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, 0);
        init.linear("x.value", d, d);
        init.linear_zero("x.offsets", d, 2 * points);
        init.linear_zero("x.weights", d, points);
        init.linear("x.out", d, d);
        *store.get_mut("x.value.w").unwrap() = identity(d);
        *store.get_mut("x.out.w").unwrap() = identity(d);
        let mem = Initializer::new(9).uniform(&[h * w, d], 1.0);
        (store, mem)
    }

    fn run(store: &ParamStore, mem: &Tensor, h: usize, w: usize, refs: [f64; 4], points: usize) -> Vec<f64> {
        let d = mem.shape()[1];
        let mut g = Graph::inference();
        let memory = EncoderMemory {
            values: g.constant(mem.clone()),
            layout: LevelLayout::new(vec![(h, w)]),
            valid_ratios: [[1.0; 2]; 3],
        };
        let q = g.constant(Tensor::zeros(&[1, d]));
        let r = g.constant(Tensor::from_vec(&[1, 4], refs.to_vec()));
        let mut ctx = Ctx::new(&mut g, store, false);
        let out = ms_deform_attn(&mut ctx, "x", q, r, &memory, 1, points);
        ctx.g.value(out).data().to_vec()
    }

    #[test]
    fn one_hot_lattice_sample_returns_cell() {
        let (h, w, d, k) = (4, 5, 3, 2);
        let (mut store, mem) = lattice_setup(h, w, d, k);
        // point 0 gets all the weight; offsets zero so it sits on the
        // reference centre, chosen at the centre of cell (row 2, col 3)
        store.get_mut("x.weights.b").unwrap().data_mut().copy_from_slice(&[60.0, 0.0]);
        let (cx, cy) = ((3.0 + 0.5) / w as f64, (2.0 + 0.5) / h as f64);
        let got = run(&store, &mem, h, w, [cx, cy, 0.2, 0.2], k);
        for c in 0..d {
            assert!((got[c] - mem.at(&[2 * w + 3, c])).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_weights_bilinear_average() {
        let (h, w, d, k) = (4, 4, 2, 1);
        let (store, mem) = lattice_setup(h, w, d, k);
        // pixel coordinates (x, y) = (1.25, 2.5) → taps (1,2),(2,2),(1,3),(2,3)
        let (px, py) = (1.25, 2.5);
        let got = run(&store, &mem, h, w, [(px + 0.5) / w as f64, (py + 0.5) / h as f64, 0.1, 0.1], k);
        let v = |x: usize, y: usize, c: usize| mem.at(&[y * w + x, c]);
        for c in 0..d {
            let expect = 0.75 * 0.5 * v(1, 2, c) + 0.25 * 0.5 * v(2, 2, c) + 0.75 * 0.5 * v(1, 3, c) + 0.25 * 0.5 * v(2, 3, c);
            assert!((got[c] - expect).abs() < 1e-12);
        }
    }

    fn tiny_decoder() -> (ModelConfig, ParamStore) {
        let cfg = ModelConfig::tiny();
        let mut store = ParamStore::new();
        init(&mut Init::new(&mut store, 4), &cfg);
        (cfg, store)
    }

    fn memory(g: &mut Graph, d: usize) -> EncoderMemory {
        let layout = LevelLayout::new(vec![(8, 8), (4, 4), (2, 2)]);
        EncoderMemory {
            values: g.constant(Initializer::new(5).uniform(&[layout.len(), d], 1.0)),
            layout,
            valid_ratios: [[1.0; 2]; 3],
        }
    }

    #[test]
    fn shapes_and_zero_delta_identity() {
        let (cfg, store) = tiny_decoder();
        let mut g = Graph::inference();
        let mem = memory(&mut g, cfg.hidden_dim);
        let mut ctx = Ctx::new(&mut g, &store, false);
        let (e, r) = detect_queries(&mut ctx);
        let out = decode(&mut ctx, &cfg, e, r, &mem).unwrap();
        assert_eq!(out.num_layers(), cfg.decoder_layers);
        for l in 0..cfg.decoder_layers {
            assert_eq!(ctx.g.shape(out.logits[l]), &[cfg.num_queries]);
            assert_eq!(ctx.g.shape(out.boxes[l]), &[cfg.num_queries, 4]);
            // final box-head layers start at zero, so every layer returns the reference
            let (a, b) = (ctx.g.value(out.boxes[l]).data(), ctx.g.value(r).data());
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn single_layer_refinement_arithmetic() {
        let (mut cfg, mut store) = tiny_decoder();
        cfg.decoder_layers = 1;
        let bias = [0.3, -0.2, 0.1, 0.5];
        store.get_mut("decoder.l0.box.fc3.b").unwrap().data_mut().copy_from_slice(&bias);
        let mut g = Graph::inference();
        let mem = memory(&mut g, cfg.hidden_dim);
        let refs = [0.4, 0.6, 0.2, 0.3];
        let e = g.constant(Tensor::zeros(&[1, cfg.hidden_dim]));
        let r = g.constant(Tensor::from_vec(&[1, 4], refs.to_vec()));
        let mut ctx = Ctx::new(&mut g, &store, false);
        let out = decode(&mut ctx, &cfg, e, r, &mem).unwrap();
        let got = ctx.g.value(out.boxes[0]).data();
        for i in 0..4 {
            let z = (refs[i] / (1.0 - refs[i])).ln() + bias[i];
            assert!((got[i] - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_references_outside_unit_square() {
        let (cfg, store) = tiny_decoder();
        let mut g = Graph::inference();
        let mem = memory(&mut g, cfg.hidden_dim);
        let e = g.constant(Tensor::zeros(&[1, cfg.hidden_dim]));
        let r = g.constant(Tensor::from_vec(&[1, 4], vec![0.5, 1.2, 0.1, 0.1]));
        let mut ctx = Ctx::new(&mut g, &store, false);
        assert!(decode(&mut ctx, &cfg, e, r, &mem).is_err());
    }

    #[test]
    fn empty_query_set_is_legal() {
        let (cfg, store) = tiny_decoder();
        let mut g = Graph::inference();
        let mem = memory(&mut g, cfg.hidden_dim);
        let e = g.constant(Tensor::zeros(&[0, cfg.hidden_dim]));
        let r = g.constant(Tensor::zeros(&[0, 4]));
        let mut ctx = Ctx::new(&mut g, &store, false);
        let out = decode(&mut ctx, &cfg, e, r, &mem).unwrap();
        assert_eq!(ctx.g.shape(out.boxes[1]), &[0, 4]);
    }
}
