//! Parameter initialization and the layer helpers shared by every network
//! component.

use querytrack_autograd::init::Initializer;
use querytrack_autograd::{BatchStats, Graph, ParamStore, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;
pub const BN_EPS: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.03;

/// Registers freshly initialized parameters under hierarchical names.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: Initializer,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Self {
            store,
            rng: Initializer::new(seed),
        }
    }

    pub fn tensor(&mut self, name: &str, t: Tensor) {
        self.store.insert(name, t);
    }

    /// `w: [in, out]` (Xavier), `b: [out]` zero.
    pub fn linear(&mut self, name: &str, inp: usize, out: usize) {
        let w = self.rng.xavier(inp, out);
        self.store.insert(format!("{name}.w"), w);
        self.store.insert(format!("{name}.b"), Tensor::zeros(&[out]));
    }

    /// Linear layer with all-zero weights and bias.
    pub fn linear_zero(&mut self, name: &str, inp: usize, out: usize) {
        self.store.insert(format!("{name}.w"), Tensor::zeros(&[inp, out]));
        self.store.insert(format!("{name}.b"), Tensor::zeros(&[out]));
    }

    pub fn layer_norm(&mut self, name: &str, d: usize) {
        self.store.insert(format!("{name}.gamma"), Tensor::ones(&[d]));
        self.store.insert(format!("{name}.beta"), Tensor::zeros(&[d]));
    }

    /// Bias-free convolution followed by batch norm.
    pub fn conv_bn(&mut self, name: &str, inp: usize, out: usize, k: usize) {
        let w = self.rng.conv(out, inp, k);
        self.store.insert(format!("{name}.conv.w"), w);
        self.store.insert(format!("{name}.bn.gamma"), Tensor::ones(&[out]));
        self.store.insert(format!("{name}.bn.beta"), Tensor::zeros(&[out]));
        self.store.insert_buffer(format!("{name}.bn.mean"), Tensor::zeros(&[out]));
        self.store.insert_buffer(format!("{name}.bn.var"), Tensor::ones(&[out]));
    }

    /// Multi-head attention projections `q, k, v, o`.
    pub fn attention(&mut self, name: &str, d: usize) {
        for p in ["q", "k", "v", "o"] {
            self.linear(&format!("{name}.{p}"), d, d);
        }
    }

    /// Two-layer feed-forward block `d → hidden → d`.
    pub fn ffn(&mut self, name: &str, d: usize, hidden: usize) {
        self.linear(&format!("{name}.fc1"), d, hidden);
        self.linear(&format!("{name}.fc2"), hidden, d);
    }
}

/// Forward-pass context: the tape, the parameters and the mode.
pub struct Ctx<'a> {
    pub g: &'a mut Graph,
    pub store: &'a ParamStore,
    /// Batch norm uses batch statistics and reports them when set.
    pub training: bool,
    pub bn_stats: Vec<(String, BatchStats)>,
}

impl<'a> Ctx<'a> {
    pub fn new(g: &'a mut Graph, store: &'a ParamStore, training: bool) -> Self {
        Self {
            g,
            store,
            training,
            bn_stats: Vec::new(),
        }
    }

    pub fn p(&mut self, name: &str) -> Var {
        self.g.param(self.store, name)
    }

    pub fn linear(&mut self, name: &str, x: Var) -> Var {
        let w = self.p(&format!("{name}.w"));
        let b = self.p(&format!("{name}.b"));
        self.g.linear(x, w, Some(b))
    }

    pub fn layer_norm(&mut self, name: &str, x: Var) -> Var {
        let gamma = self.p(&format!("{name}.gamma"));
        let beta = self.p(&format!("{name}.beta"));
        self.g.layer_norm(x, gamma, beta, LN_EPS)
    }

    /// Convolution (same padding) + batch norm, optionally followed by SiLU.
    pub fn conv_bn(&mut self, name: &str, x: Var, stride: usize, act: bool) -> Var {
        let w = self.p(&format!("{name}.conv.w"));
        let k = self.g.shape(w)[2];
        let y = self.g.conv2d(x, w, stride, k / 2);
        let gamma = self.p(&format!("{name}.bn.gamma"));
        let beta = self.p(&format!("{name}.bn.beta"));
        let y = if self.training {
            let (y, stats) = self.g.batch_norm(y, gamma, beta, None, BN_EPS);
            self.bn_stats.push((name.to_string(), stats.expect("training statistics")));
            y
        } else {
            let mean = self.store.buffer(&format!("{name}.bn.mean")).expect("bn mean buffer");
            let var = self.store.buffer(&format!("{name}.bn.var")).expect("bn var buffer");
            self.g.batch_norm(y, gamma, beta, Some((mean.data(), var.data())), BN_EPS).0
        };
        if act {
            self.g.silu(y)
        } else {
            y
        }
    }

    /// Multi-head attention. `q_in: [Q, D]`, `k_in: [K, D]`, `v_in: [K, D]`.
    pub fn attention(&mut self, name: &str, q_in: Var, k_in: Var, v_in: Var, heads: usize) -> Var {
        self.attention_weights(name, q_in, k_in, v_in, heads).0
    }

    /// Attention output and the `[heads, Q, K]` weight tensor.
    pub fn attention_weights(&mut self, name: &str, q_in: Var, k_in: Var, v_in: Var, heads: usize) -> (Var, Var) {
        let d = self.g.shape(q_in)[1];
        let (nq, nk) = (self.g.shape(q_in)[0], self.g.shape(k_in)[0]);
        let dh = d / heads;
        let q = self.linear(&format!("{name}.q"), q_in);
        let k = self.linear(&format!("{name}.k"), k_in);
        let v = self.linear(&format!("{name}.v"), v_in);
        let g = &mut *self.g;
        let q = g.reshape(q, &[nq, heads, dh]);
        let q = g.permute(q, &[1, 0, 2]);
        let q = g.scale(q, 1.0 / (dh as f64).sqrt());
        let k = g.reshape(k, &[nk, heads, dh]);
        let k = g.permute(k, &[1, 2, 0]);
        let v = g.reshape(v, &[nk, heads, dh]);
        let v = g.permute(v, &[1, 0, 2]);
        let scores = g.matmul(q, k);
        let weights = g.softmax(scores);
        let out = g.matmul(weights, v);
        let out = g.permute(out, &[1, 0, 2]);
        let out = g.reshape(out, &[nq, d]);
        (self.linear(&format!("{name}.o"), out), weights)
    }

    /// `fc2(relu(fc1(x)))`.
    pub fn ffn(&mut self, name: &str, x: Var) -> Var {
        let h = self.linear(&format!("{name}.fc1"), x);
        let h = self.g.relu(h);
        self.linear(&format!("{name}.fc2"), h)
    }
}

/// Folds observed batch statistics into the running estimates.
pub fn update_running_stats(store: &mut ParamStore, stats: &[(String, BatchStats)]) {
    for (name, s) in stats {
        for (suffix, fresh) in [("mean", &s.mean), ("var", &s.var)] {
            let buf = store
                .buffer_mut(&format!("{name}.bn.{suffix}"))
                .expect("running statistics buffer");
            for (r, f) in buf.data_mut().iter_mut().zip(fresh) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * f;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_rows_are_stochastic() {
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, 1);
        init.attention("a", 8);
        let mut g = Graph::inference();
        let x = g.constant(Initializer::new(2).uniform(&[5, 8], 1.0));
        let mut ctx = Ctx::new(&mut g, &store, false);
        let (out, w) = ctx.attention_weights("a", x, x, x, 2);
        assert_eq!(ctx.g.shape(out), &[5, 8]);
        assert_eq!(ctx.g.shape(w), &[2, 5, 5]);
        for row in ctx.g.value(w).data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
