use std::collections::BTreeMap;

use crate::graph::Gradients;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from already-clipped gradients.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, g) in grads {
            let p = store
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown parameter `{name}`"));
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            // no decay on biases and normalization affine terms
            let decay = if p.ndim() >= 2 { self.weight_decay } else { 0.0 };
            let (pd, md, vd, gd) = (p.data_mut(), m.data_mut(), v.data_mut(), g.data());
            for i in 0..gd.len() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gd[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gd[i] * gd[i];
                let mh = md[i] / bc1;
                let vh = vd[i] / bc2;
                pd[i] -= self.lr * (mh / (vh.sqrt() + self.eps) + decay * pd[i]);
            }
        }
    }

    /// Moment estimates and step count, for checkpointing.
    pub fn state(&self) -> (u64, &BTreeMap<String, Tensor>, &BTreeMap<String, Tensor>) {
        (self.step, &self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: BTreeMap<String, Tensor>, v: BTreeMap<String, Tensor>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }
}

/// Collects parameter gradients and rescales them so their global L2 norm is
/// at most `max_norm`. Returns the gradients and the pre-clipping norm.
pub fn clip_grad_norm(grads: &Gradients, max_norm: f64) -> (BTreeMap<String, Tensor>, f64) {
    let mut out: BTreeMap<String, Tensor> = grads
        .params()
        .map(|(n, g)| (n.to_string(), g.clone()))
        .collect();
    let norm = out.values().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / (norm + 1e-6);
        for g in out.values_mut() {
            g.scale_inplace(s);
        }
    }
    (out, norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::from_vec(&[2], vec![3.0, -2.0]));
        let mut opt = AdamW::new(0.1, 0.0);
        for _ in 0..300 {
            let mut g = Graph::new();
            let x = g.param(&store, "x");
            let sq = g.mul(x, x);
            let l = g.sum_all(sq);
            let grads = g.backward(l);
            let (gr, _) = clip_grad_norm(&grads, 0.0);
            opt.step(&mut store, &gr);
        }
        assert!(store.get("x").unwrap().sq_norm() < 1e-3);
    }

    #[test]
    fn clipping_bounds_norm() {
        let store = {
            let mut s = ParamStore::new();
            s.insert("w", Tensor::from_vec(&[2], vec![3.0, 4.0]));
            s
        };
        let mut g = Graph::new();
        let w = g.param(&store, "w");
        let sq = g.mul(w, w);
        let l = g.sum_all(sq);
        let grads = g.backward(l);
        let (gr, norm) = clip_grad_norm(&grads, 0.1);
        assert!((norm - 10.0).abs() < 1e-12);
        assert!((gr["w"].sq_norm().sqrt() - 0.1).abs() < 1e-6);
    }
}
