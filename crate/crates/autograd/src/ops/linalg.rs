//! Matrix products, softmax and layer normalization.

use crate::graph::{Backward, Graph, Var};
use crate::tensor::Tensor;

/// `c[m,n] (+)= a[m,k] · b[k,n]` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: callers pass slices sized for the given dimensions and strides;
    // `c` is dense row-major m×n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct Matmul {
    a: Var,
    b: Var,
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    b_batched: bool,
}

impl Backward for Matmul {
    fn backward(&self, g: &Graph, _out: Var, grad: &Tensor) -> Vec<(Var, Tensor)> {
        let (m, k, n) = (self.m, self.k, self.n);
        let av = g.value(self.a).data();
        let bv = g.value(self.b).data();
        let gd = grad.data();
        let mut out = Vec::new();
        if g.requires_grad(self.a) {
            let mut ga = vec![0.0; self.batch * m * k];
            for bi in 0..self.batch {
                let boff = if self.b_batched { bi * k * n } else { 0 };
                // dA = dC · Bᵀ
                gemm(
                    m,
                    n,
                    k,
                    &gd[bi * m * n..],
                    (n as isize, 1),
                    &bv[boff..],
                    (1, n as isize),
                    &mut ga[bi * m * k..(bi + 1) * m * k],
                    false,
                );
            }
            out.push((self.a, Tensor::from_vec(g.shape(self.a), ga)));
        }
        if g.requires_grad(self.b) {
            let mut gb = vec![0.0; if self.b_batched { self.batch } else { 1 } * k * n];
            for bi in 0..self.batch {
                let boff = if self.b_batched { bi * k * n } else { 0 };
                // dB = Aᵀ · dC
                gemm(
                    k,
                    m,
                    n,
                    &av[bi * m * k..],
                    (1, k as isize),
                    &gd[bi * m * n..],
                    (n as isize, 1),
                    &mut gb[boff..boff + k * n],
                    true,
                );
            }
            out.push((self.b, Tensor::from_vec(g.shape(self.b), gb)));
        }
        out
    }
}

struct Softmax {
    x: Var,
}

impl Backward for Softmax {
    fn backward(&self, g: &Graph, out: Var, grad: &Tensor) -> Vec<(Var, Tensor)> {
        let y = g.value(out);
        let d = *y.shape().last().unwrap();
        let mut gx = vec![0.0; y.len()];
        for ((gr, yr), gxr) in grad
            .data()
            .chunks(d)
            .zip(y.data().chunks(d))
            .zip(gx.chunks_mut(d))
        {
            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
            for i in 0..d {
                gxr[i] = yr[i] * (gr[i] - dot);
            }
        }
        vec![(self.x, Tensor::from_vec(y.shape(), gx))]
    }
}

struct LayerNorm {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Backward for LayerNorm {
    fn backward(&self, g: &Graph, _out: Var, grad: &Tensor) -> Vec<(Var, Tensor)> {
        let gamma = g.value(self.gamma).data();
        let d = gamma.len();
        let rows = grad.len() / d;
        let gd = grad.data();
        let mut gx = vec![0.0; grad.len()];
        let mut gg = vec![0.0; d];
        let mut gbeta = vec![0.0; d];
        for r in 0..rows {
            let gr = &gd[r * d..(r + 1) * d];
            let xh = &self.xhat[r * d..(r + 1) * d];
            let mut mean_dxh = 0.0;
            let mut mean_dxh_xh = 0.0;
            for i in 0..d {
                let dxh = gr[i] * gamma[i];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh[i];
                gg[i] += gr[i] * xh[i];
                gbeta[i] += gr[i];
            }
            mean_dxh /= d as f64;
            mean_dxh_xh /= d as f64;
            for i in 0..d {
                let dxh = gr[i] * gamma[i];
                gx[r * d + i] = self.inv_std[r] * (dxh - mean_dxh - xh[i] * mean_dxh_xh);
            }
        }
        let mut out = Vec::new();
        if g.requires_grad(self.x) {
            out.push((self.x, Tensor::from_vec(g.shape(self.x), gx)));
        }
        if g.requires_grad(self.gamma) {
            out.push((self.gamma, Tensor::from_vec(&[d], gg)));
        }
        if g.requires_grad(self.beta) {
            out.push((self.beta, Tensor::from_vec(&[d], gbeta)));
        }
        out
    }
}

impl Graph {
    /// Matrix product over the last two axes. `b` is either a plain matrix
    /// shared across `a`'s leading axes or has the same leading axes as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        assert!(sa.len() >= 2 && sb.len() >= 2, "matmul needs matrices");
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        assert_eq!(k, k2, "matmul inner dimension {sa:?} x {sb:?}");
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let b_batched = sb.len() > 2;
        if b_batched {
            assert_eq!(&sa[..sa.len() - 2], &sb[..sb.len() - 2], "matmul batch axes");
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut data = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let boff = if b_batched { bi * k * n } else { 0 };
            gemm(
                m,
                k,
                n,
                &av[bi * m * k..],
                (k as isize, 1),
                &bv[boff..],
                (n as isize, 1),
                &mut data[bi * m * n..(bi + 1) * m * n],
                false,
            );
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend_from_slice(&[m, n]);
        let value = Tensor::from_vec(&shape, data);
        self.push_op(
            value,
            &[a, b],
            Matmul {
                a,
                b,
                batch,
                m,
                k,
                n,
                b_batched,
            },
        )
    }

    /// `x · w + bias` with `w` stored as `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Var {
        let y = self.matmul(x, w);
        match bias {
            Some(b) => self.add(y, b),
            None => y,
        }
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let d = *xv.shape().last().expect("softmax on scalar");
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(d) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let value = Tensor::from_vec(xv.shape(), data);
        self.push_op(value, &[x], Softmax { x })
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let d = *xv.shape().last().unwrap();
        assert_eq!(self.shape(gamma), &[d]);
        assert_eq!(self.shape(beta), &[d]);
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for i in 0..d {
                xhat[r * d + i] = (row[i] - mean) * is;
            }
        }
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let data = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| h * gv[i % d] + bv[i % d])
            .collect();
        let value = Tensor::from_vec(xv.shape(), data);
        self.push_op(
            value,
            &[x, gamma, beta],
            LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }
}
