//! Finite-difference audit of the full decoder and deep-supervision
//! independence between layers.

use querytrack_autograd::gradcheck::{numeric_gradient, relative_error};
use querytrack_autograd::init::Initializer;
use querytrack_autograd::{Graph, LevelLayout, ParamStore, Tensor, Var};
use querytrack_model::decoder::{self, detect_queries};
use querytrack_model::encoder::EncoderMemory;
use querytrack_model::nn::{Ctx, Init};
use querytrack_model::ModelConfig;

fn audit_config() -> ModelConfig {
    let mut cfg = ModelConfig::tiny();
    cfg.decoder_layers = 2;
    cfg.num_queries = 4;
    cfg.detach_layer_references = false;
    cfg
}

/// Decoder parameters with every tensor perturbed away from its structured
/// initialization, plus a random three-level memory whose largest map is 8×8.
fn setup(cfg: &ModelConfig) -> (ParamStore, Tensor, LevelLayout) {
    let mut store = ParamStore::new();
    decoder::init(&mut Init::new(&mut store, 11), cfg);
    let mut rng = Initializer::new(12);
    let names: Vec<String> = store.params().map(|(k, _)| k.clone()).collect();
    for k in names {
        let t = store.get_mut(&k).unwrap();
        let noise = rng.uniform(t.shape(), 0.3);
        t.add_assign(&noise);
    }
    let layout = LevelLayout::new(cfg.level_shapes().to_vec());
    assert_eq!(layout.shapes[0], (8, 8));
    let mem = rng.uniform(&[layout.len(), cfg.hidden_dim], 1.0);
    (store, mem, layout)
}

struct Readout {
    logits: Vec<Tensor>,
    boxes: Vec<Tensor>,
    hidden: Tensor,
}

fn readout(cfg: &ModelConfig) -> Readout {
    let mut rng = Initializer::new(13);
    let q = cfg.num_queries;
    Readout {
        logits: (0..cfg.decoder_layers).map(|_| rng.uniform(&[q], 1.0)).collect(),
        boxes: (0..cfg.decoder_layers).map(|_| rng.uniform(&[q, 4], 1.0)).collect(),
        hidden: rng.uniform(&[q, cfg.hidden_dim], 1.0),
    }
}

fn scalar(g: &mut Graph, v: Var, coeff: &Tensor) -> Var {
    let c = g.constant(coeff.clone());
    let p = g.mul(v, c);
    g.sum_all(p)
}

fn forward(g: &mut Graph, store: &ParamStore, cfg: &ModelConfig, mem: Var, layout: &LevelLayout, r: &Readout) -> Var {
    let mut ctx = Ctx::new(g, store, false);
    let memory = EncoderMemory {
        values: mem,
        layout: layout.clone(),
        valid_ratios: [[1.0; 2]; 3],
    };
    let (embed, refs) = detect_queries(&mut ctx);
    let out = decoder::decode(&mut ctx, cfg, embed, refs, &memory).unwrap();
    let mut terms = Vec::new();
    for l in 0..out.num_layers() {
        terms.push(scalar(ctx.g, out.logits[l], &r.logits[l]));
        terms.push(scalar(ctx.g, out.boxes[l], &r.boxes[l]));
    }
    terms.push(scalar(ctx.g, out.hidden, &r.hidden));
    let first = terms[0];
    terms[1..].iter().fold(first, |acc, &t| ctx.g.add(acc, t))
}

fn value(store: &ParamStore, cfg: &ModelConfig, mem: &Tensor, layout: &LevelLayout, r: &Readout) -> f64 {
    let mut g = Graph::inference();
    let m = g.constant(mem.clone());
    let out = forward(&mut g, store, cfg, m, layout, r);
    g.value(out).item()
}

#[test]
fn whole_decoder_matches_finite_differences() {
    let cfg = audit_config();
    let (store, mem, layout) = setup(&cfg);
    let r = readout(&cfg);
    let mut g = Graph::new();
    let m = g.input(mem.clone());
    let out = forward(&mut g, &store, &cfg, m, &layout, &r);
    let grads = g.backward(out);
    let eps = 1e-6;

    let mut worst = (String::new(), 0.0);
    let names: Vec<String> = store.params().map(|(k, _)| k.clone()).collect();
    for name in &names {
        let analytic = grads.param(name).cloned().unwrap_or_else(|| Tensor::zeros(store.get(name).unwrap().shape()));
        let x = store.get(name).unwrap().clone();
        let mut probe = store.clone();
        let numeric = numeric_gradient(
            |t| {
                *probe.get_mut(name).unwrap() = t.clone();
                value(&probe, &cfg, &mem, &layout, &r)
            },
            &x,
            eps,
        );
        // Key biases shift every score of a query equally, so their exact
        // gradient is zero and only the difference noise remains.
        let err = relative_error(&analytic, &numeric, 1e-4);
        if err > worst.1 {
            worst = (name.clone(), err);
        }
        assert!(err <= 1e-3, "{name}: relative error {err:.3e}");
    }
    let analytic = grads.get(m).unwrap().clone();
    let numeric = numeric_gradient(|t| value(&store, &cfg, t, &layout, &r), &mem, eps);
    let err = relative_error(&analytic, &numeric, 1e-6);
    assert!(err <= 1e-3, "memory: relative error {err:.3e}");
    eprintln!("decoder audit: {} parameter tensors, worst {} at {:.3e}", names.len(), worst.0, worst.1);
}

fn layer_outputs(store: &ParamStore, cfg: &ModelConfig, mem: &Tensor, layout: &LevelLayout) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut g = Graph::inference();
    let m = g.constant(mem.clone());
    let mut ctx = Ctx::new(&mut g, store, false);
    let memory = EncoderMemory {
        values: m,
        layout: layout.clone(),
        valid_ratios: [[1.0; 2]; 3],
    };
    let (embed, refs) = detect_queries(&mut ctx);
    let out = decoder::decode(&mut ctx, cfg, embed, refs, &memory).unwrap();
    (0..out.num_layers())
        .map(|l| {
            (
                ctx.g.value(out.logits[l]).data().to_vec(),
                ctx.g.value(out.boxes[l]).data().to_vec(),
            )
        })
        .collect()
}

#[test]
fn earlier_layers_ignore_later_weights() {
    let mut cfg = audit_config();
    cfg.decoder_layers = 3;
    let (store, mem, layout) = setup(&cfg);
    let before = layer_outputs(&store, &cfg, &mem, &layout);
    let mut changed = store.clone();
    let names: Vec<String> = changed.params().map(|(k, _)| k.clone()).filter(|k| k.starts_with("decoder.l1.")).collect();
    let mut rng = Initializer::new(99);
    for k in names {
        let t = changed.get_mut(&k).unwrap();
        let noise = rng.uniform(t.shape(), 1.0);
        t.add_assign(&noise);
    }
    let after = layer_outputs(&changed, &cfg, &mem, &layout);
    assert_eq!(before[0], after[0]);
    assert_ne!(before[1], after[1]);
    assert_ne!(before[2], after[2]);
}
