//! Deformable sampling on one-hot lattices and a finite-difference audit of
//! the whole decoder.

use querytrack_autograd::gradcheck::{numeric_gradient, relative_error};
use querytrack_autograd::init::Initializer;
use querytrack_autograd::{Graph, LevelLayout, ParamStore, Tensor, Var};
use querytrack_model::decoder::{self, detect_queries, ms_deform_attn};
use querytrack_model::encoder::EncoderMemory;
use querytrack_model::nn::{Ctx, Init};
use querytrack_model::ModelConfig;

use crate::Outcome;

pub const AUDIT_REL_TOL: f64 = 1e-3;
pub const AUDIT_EPS: f64 = 1e-6;
/// Gradient norms below this are compared absolutely; attention key biases
/// have an exactly zero gradient.
pub const AUDIT_FLOOR: f64 = 1e-4;

fn identity(d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[d, d]);
    for i in 0..d {
        t.set(&[i, i], 1.0);
    }
    t
}

/// Largest deviation of a one-hot sample at every cell centre of an
/// `h × w` lattice from the cell's value; identity projections, zero biases.
pub fn lattice_deviation(h: usize, w: usize, d: usize, seed: u64) -> f64 {
    let points = 3;
    let mut store = ParamStore::new();
    let mut init = Init::new(&mut store, seed);
    init.linear("x.value", d, d);
    init.linear_zero("x.offsets", d, 2 * points);
    init.linear_zero("x.weights", d, points);
    init.linear("x.out", d, d);
    *store.get_mut("x.value.w").unwrap() = identity(d);
    *store.get_mut("x.out.w").unwrap() = identity(d);
    store.get_mut("x.value.b").unwrap().data_mut().fill(0.0);
    store.get_mut("x.out.b").unwrap().data_mut().fill(0.0);
    // all attention on point 1; offsets are zero so it sits on the reference
    store.get_mut("x.weights.b").unwrap().data_mut().copy_from_slice(&[0.0, 800.0, 0.0]);
    let mem = Initializer::new(seed + 1).uniform(&[h * w, d], 1.0);

    let mut refs = Vec::new();
    for r in 0..h {
        for c in 0..w {
            refs.extend([(c as f64 + 0.5) / w as f64, (r as f64 + 0.5) / h as f64, 0.3, 0.3]);
        }
    }
    let q = h * w;
    let mut g = Graph::inference();
    let memory = EncoderMemory {
        values: g.constant(mem.clone()),
        layout: LevelLayout::new(vec![(h, w)]),
        valid_ratios: [[1.0; 2]; 3],
    };
    let query = g.constant(Tensor::zeros(&[q, d]));
    let r = g.constant(Tensor::from_vec(&[q, 4], refs));
    let mut ctx = Ctx::new(&mut g, &store, false);
    let out = ms_deform_attn(&mut ctx, "x", query, r, &memory, 1, points);
    let got = ctx.g.value(out);
    let mut worst: f64 = 0.0;
    for cell in 0..q {
        for k in 0..d {
            worst = worst.max((got.at(&[cell, k]) - mem.at(&[cell, k])).abs());
        }
    }
    worst
}

/// Two layers, four queries, largest map 8×8, references not detached.
pub fn audit_config() -> ModelConfig {
    let mut cfg = ModelConfig::tiny();
    cfg.decoder_layers = 2;
    cfg.num_queries = 4;
    cfg.detach_layer_references = false;
    cfg
}

struct Audit {
    cfg: ModelConfig,
    store: ParamStore,
    mem: Tensor,
    layout: LevelLayout,
    logits: Vec<Tensor>,
    boxes: Vec<Tensor>,
    hidden: Tensor,
}

impl Audit {
    /// Every parameter perturbed away from its structured initialization;
    /// the scalar is a random projection of every layer's outputs.
    fn new(cfg: ModelConfig) -> Self {
        let mut store = ParamStore::new();
        decoder::init(&mut Init::new(&mut store, 11), &cfg);
        let mut rng = Initializer::new(12);
        let names: Vec<String> = store.params().map(|(k, _)| k.clone()).collect();
        for k in names {
            let t = store.get_mut(&k).unwrap();
            let noise = rng.uniform(t.shape(), 0.3);
            t.add_assign(&noise);
        }
        let layout = LevelLayout::new(cfg.level_shapes().to_vec());
        let mem = rng.uniform(&[layout.len(), cfg.hidden_dim], 1.0);
        let q = cfg.num_queries;
        let logits = (0..cfg.decoder_layers).map(|_| rng.uniform(&[q], 1.0)).collect();
        let boxes = (0..cfg.decoder_layers).map(|_| rng.uniform(&[q, 4], 1.0)).collect();
        let hidden = rng.uniform(&[q, cfg.hidden_dim], 1.0);
        Self {
            cfg,
            store,
            mem,
            layout,
            logits,
            boxes,
            hidden,
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, mem: Var) -> Var {
        let mut ctx = Ctx::new(g, store, false);
        let memory = EncoderMemory {
            values: mem,
            layout: self.layout.clone(),
            valid_ratios: [[1.0; 2]; 3],
        };
        let (embed, refs) = detect_queries(&mut ctx);
        let out = decoder::decode(&mut ctx, &self.cfg, embed, refs, &memory).unwrap();
        let mut dot = |v: Var, c: &Tensor| {
            let c = ctx.g.constant(c.clone());
            let p = ctx.g.mul(v, c);
            ctx.g.sum_all(p)
        };
        let mut terms = Vec::new();
        for l in 0..out.num_layers() {
            terms.push(dot(out.logits[l], &self.logits[l]));
            terms.push(dot(out.boxes[l], &self.boxes[l]));
        }
        terms.push(dot(out.hidden, &self.hidden));
        let first = terms[0];
        terms[1..].iter().fold(first, |acc, &t| ctx.g.add(acc, t))
    }

    fn value(&self, store: &ParamStore, mem: &Tensor) -> f64 {
        let mut g = Graph::inference();
        let m = g.constant(mem.clone());
        let out = self.forward(&mut g, store, m);
        g.value(out).item()
    }

    /// `(tensor, relative error)` for every parameter and the memory.
    fn run(&self) -> Vec<(String, f64)> {
        let mut g = Graph::new();
        let m = g.input(self.mem.clone());
        let out = self.forward(&mut g, &self.store, m);
        let grads = g.backward(out);
        let mut errors = Vec::new();
        let names: Vec<String> = self.store.params().map(|(k, _)| k.clone()).collect();
        for name in names {
            let x = self.store.get(&name).unwrap().clone();
            let analytic = grads.param(&name).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
            let mut probe = self.store.clone();
            let numeric = numeric_gradient(
                |t| {
                    *probe.get_mut(&name).unwrap() = t.clone();
                    self.value(&probe, &self.mem)
                },
                &x,
                AUDIT_EPS,
            );
            errors.push((name, relative_error(&analytic, &numeric, AUDIT_FLOOR)));
        }
        let analytic = grads.get(m).unwrap().clone();
        let numeric = numeric_gradient(|t| self.value(&self.store, t), &self.mem, AUDIT_EPS);
        errors.push(("memory".into(), relative_error(&analytic, &numeric, AUDIT_FLOOR)));
        errors
    }
}

pub fn check() -> Outcome {
    let mut failures = Vec::new();
    let mut lattices = 0;
    for (k, &(h, w)) in [(4, 4), (8, 4), (2, 16), (8, 8)].iter().enumerate() {
        let dev = lattice_deviation(h, w, 3, 30 + k as u64);
        lattices += 1;
        if dev != 0.0 {
            failures.push(format!("{h}x{w} lattice deviates by {dev:.2e}"));
        }
    }
    let cfg = audit_config();
    let layout = LevelLayout::new(cfg.level_shapes().to_vec());
    if layout.shapes[0] != (8, 8) {
        failures.push(format!("audit memory largest level is {:?}", layout.shapes[0]));
    }
    let errors = Audit::new(cfg).run();
    let (worst_name, worst) = errors
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap_or_default();
    for (name, e) in &errors {
        if *e > AUDIT_REL_TOL || !e.is_finite() {
            failures.push(format!("{name}: relative error {e:.2e}"));
        }
    }
    let summary = format!(
        "{lattices} one-hot lattices exact; decoder audit over {} tensors, worst {worst_name} at {worst:.1e} (tol {AUDIT_REL_TOL:e})",
        errors.len()
    );
    Outcome::from_failures(summary, failures)
}
