//! Temporal aggregation of track queries between frames.

use querytrack_autograd::Var;

use crate::config::ModelConfig;
use crate::nn::{Ctx, Init};

pub fn init(init: &mut Init, cfg: &ModelConfig) {
    let d = cfg.hidden_dim;
    init.layer_norm("tan.ln1", d);
    init.attention("tan.attn", d);
    init.layer_norm("tan.ln2", d);
    init.ffn("tan.ffn", d, d * cfg.ffn_ratio);
    // start as the identity map on hidden states
    init.linear_zero("tan.attn.o", d, d);
    init.linear_zero("tan.ffn.fc2", d * cfg.ffn_ratio, d);
}

/// Self-attention over the current track hidden states, with queries and
/// keys offset by each track's previous embedding, then a feed-forward
/// block; both residual and pre-normalized. `hidden`, `prev`: `[T, D]`.
pub fn aggregate(ctx: &mut Ctx, hidden: Var, prev: Var, heads: usize) -> Var {
    if ctx.g.shape(hidden)[0] == 0 {
        return hidden;
    }
    let normed = ctx.layer_norm("tan.ln1", hidden);
    let qk = ctx.g.add(normed, prev);
    let a = ctx.attention("tan.attn", qk, qk, normed, heads);
    let x = ctx.g.add(hidden, a);
    let normed = ctx.layer_norm("tan.ln2", x);
    let f = ctx.ffn("tan.ffn", normed);
    ctx.g.add(x, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use querytrack_autograd::{init::Initializer, Graph, ParamStore, Tensor};

    fn setup(d: usize) -> (ModelConfig, ParamStore) {
        let mut cfg = ModelConfig::tiny();
        cfg.hidden_dim = d;
        let mut store = ParamStore::new();
        init(&mut Init::new(&mut store, 1), &cfg);
        (cfg, store)
    }

    fn run(store: &ParamStore, h: &Tensor, p: &Tensor, heads: usize) -> Tensor {
        let mut g = Graph::inference();
        let hv = g.constant(h.clone());
        let pv = g.constant(p.clone());
        let mut ctx = Ctx::new(&mut g, store, false);
        let out = aggregate(&mut ctx, hv, pv, heads);
        ctx.g.value(out).clone()
    }

    #[test]
    fn zero_weights_pass_hidden_through() {
        let (_, mut store) = setup(8);
        let names: Vec<String> = store.params().map(|(n, _)| n.clone()).filter(|n| !n.contains(".ln")).collect();
        for n in names {
            store.get_mut(&n).unwrap().scale_inplace(0.0);
        }
        let h = Initializer::new(2).uniform(&[3, 8], 1.0);
        let p = Initializer::new(3).uniform(&[3, 8], 1.0);
        assert_eq!(run(&store, &h, &p, 2), h);
    }

    #[test]
    fn single_track_hand_computed() {
        let (_, mut store) = setup(2);
        // softmax over one key is 1: out = x + o(v(ln(x))) + ffn(ln(x + ...))
        let set = |s: &mut ParamStore, n: &str, v: &[f64]| s.get_mut(n).unwrap().data_mut().copy_from_slice(v);
        set(&mut store, "tan.attn.v.w", &[2.0, 0.0, 0.0, 1.0]);
        set(&mut store, "tan.attn.v.b", &[0.1, 0.2]);
        set(&mut store, "tan.attn.o.w", &[1.0, 0.5, 0.0, 1.0]);
        set(&mut store, "tan.attn.o.b", &[0.0, -0.3]);
        let h = Tensor::from_vec(&[1, 2], vec![3.0, 1.0]);
        let p = Tensor::from_vec(&[1, 2], vec![-7.0, 4.0]);
        let got = run(&store, &h, &p, 1);
        // ln([3, 1]) = [1, -1] (up to eps); v = [2.1, -0.8]; o = [2.1, 1.05 - 0.8 - 0.3]
        let s = 1.0 / (1.0 + crate::nn::LN_EPS).sqrt();
        let v = [2.0 * s + 0.1, -s + 0.2];
        let a = [v[0], 0.5 * v[0] + v[1] - 0.3];
        let x = [3.0 + a[0], 1.0 + a[1]];
        // feed-forward output projection is zero-initialized
        assert!((got.at(&[0, 0]) - x[0]).abs() < 1e-12);
        assert!((got.at(&[0, 1]) - x[1]).abs() < 1e-12);
    }

    #[test]
    fn permutation_equivariant() {
        let (_, mut store) = setup(8);
        let mut rng = Initializer::new(7);
        for n in ["tan.attn.o.w", "tan.ffn.fc2.w"] {
            let shape = store.get(n).unwrap().shape().to_vec();
            *store.get_mut(n).unwrap() = rng.uniform(&shape, 0.5);
        }
        let h = Initializer::new(2).uniform(&[4, 8], 1.0);
        let p = Initializer::new(3).uniform(&[4, 8], 1.0);
        let perm = [2, 0, 3, 1];
        let a = run(&store, &h, &p, 2);
        let b = run(&store, &h.select_rows(&perm), &p.select_rows(&perm), 2);
        let a = a.select_rows(&perm);
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn empty_in_empty_out() {
        let (_, store) = setup(8);
        let e = Tensor::zeros(&[0, 8]);
        assert_eq!(run(&store, &e, &e, 2).shape(), &[0, 8]);
    }
}
