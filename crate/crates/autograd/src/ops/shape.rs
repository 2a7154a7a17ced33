//! Reshaping, slicing, joining and reductions.

use crate::graph::{Backward, Graph, Var};
use crate::tensor::{strides, Tensor};

struct Reshape {
    x: Var,
}

impl Backward for Reshape {
    fn backward(&self, g: &Graph, _out: Var, grad: &Tensor) -> Vec<(Var, Tensor)> {
        vec![(self.x, grad.clone().reshaped(g.shape(self.x)))]
    }
}

struct Permute {
    x: Var,
    // out flat index -> in flat index
    map: Vec<usize>,
}

impl Backward for Permute {
    fn backward(&self, g: &Graph, _out: Var, grad: &Tensor) -> Vec<(Var, Tensor)> {
        let mut gx = vec![0.0; grad.len()];
        for (o, &i) in self.map.iter().enumerate() {
            gx[i] = grad.data()[o];
        }
        vec![(self.x, Tensor::from_vec(g.shape(self.x), gx))]
    }
}

struct Narrow {
    x: Var,
    axis: usize,
    start: usize,
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

impl Backward for Narrow {
    fn backward(&self, g: &Graph, _out: Var, grad: &Tensor) -> Vec<(Var, Tensor)> {
        let xs = g.shape(self.x);
        let (outer, inner) = outer_inner(xs, self.axis);
        let full = xs[self.axis];
        let len = grad.shape()[self.axis];
        let mut gx = vec![0.0; xs.iter().product()];
        for o in 0..outer {
            let src = &grad.data()[o * len * inner..(o + 1) * len * inner];
            let dst = o * full * inner + self.start * inner;
            gx[dst..dst + len * inner].copy_from_slice(src);
        }
        vec![(self.x, Tensor::from_vec(xs, gx))]
    }
}

struct Concat {
    parts: Vec<Var>,
    axis: usize,
}

impl Backward for Concat {
    fn backward(&self, g: &Graph, _out: Var, grad: &Tensor) -> Vec<(Var, Tensor)> {
        let (outer, inner) = outer_inner(grad.shape(), self.axis);
        let total = grad.shape()[self.axis];
        let mut start = 0;
        let mut out = Vec::new();
        for &p in &self.parts {
            let len = g.shape(p)[self.axis];
            if g.requires_grad(p) {
                let mut gp = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let s = o * total * inner + start * inner;
                    gp.extend_from_slice(&grad.data()[s..s + len * inner]);
                }
                out.push((p, Tensor::from_vec(g.shape(p), gp)));
            }
            start += len;
        }
        out
    }
}

struct SelectRows {
    x: Var,
    rows: Vec<usize>,
}

impl Backward for SelectRows {
    fn backward(&self, g: &Graph, _out: Var, grad: &Tensor) -> Vec<(Var, Tensor)> {
        let xs = g.shape(self.x);
        let inner: usize = xs[1..].iter().product();
        let mut gx = vec![0.0; xs.iter().product()];
        for (k, &r) in self.rows.iter().enumerate() {
            for j in 0..inner {
                gx[r * inner + j] += grad.data()[k * inner + j];
            }
        }
        vec![(self.x, Tensor::from_vec(xs, gx))]
    }
}

struct SumAll {
    x: Var,
    scale: f64,
}

impl Backward for SumAll {
    fn backward(&self, g: &Graph, _out: Var, grad: &Tensor) -> Vec<(Var, Tensor)> {
        vec![(
            self.x,
            Tensor::full(g.shape(self.x), grad.item() * self.scale),
        )]
    }
}

struct SumAxis {
    x: Var,
    axis: usize,
}

impl Backward for SumAxis {
    fn backward(&self, g: &Graph, _out: Var, grad: &Tensor) -> Vec<(Var, Tensor)> {
        let xs = g.shape(self.x);
        let (outer, inner) = outer_inner(xs, self.axis);
        let n = xs[self.axis];
        let mut gx = vec![0.0; xs.iter().product()];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    gx[(o * n + k) * inner + i] = grad.data()[o * inner + i];
                }
            }
        }
        vec![(self.x, Tensor::from_vec(xs, gx))]
    }
}

struct Upsample2x {
    x: Var,
}

impl Backward for Upsample2x {
    fn backward(&self, g: &Graph, _out: Var, grad: &Tensor) -> Vec<(Var, Tensor)> {
        let xs = g.shape(self.x);
        let (nc, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let mut gx = vec![0.0; nc * h * w];
        let gd = grad.data();
        for c in 0..nc {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    gx[c * h * w + (y / 2) * w + x / 2] += gd[(c * 2 * h + y) * 2 * w + x];
                }
            }
        }
        vec![(self.x, Tensor::from_vec(xs, gx))]
    }
}

impl Graph {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.value(x).clone().reshaped(shape);
        self.push_op(value, &[x], Reshape { x })
    }

    /// Reorders axes: output axis `i` is input axis `dims[i]`.
    pub fn permute(&mut self, x: Var, dims: &[usize]) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(dims.len(), xs.len());
        let out_shape: Vec<usize> = dims.iter().map(|&d| xs[d]).collect();
        let in_strides = strides(&xs);
        let total: usize = xs.iter().product();
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..total {
            map.push(idx.iter().zip(dims).map(|(&i, &d)| i * in_strides[d]).sum());
            for ax in (0..dims.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        let src = self.value(x).data();
        let data = map.iter().map(|&i| src[i]).collect();
        let value = Tensor::from_vec(&out_shape, data);
        self.push_op(value, &[x], Permute { x, map })
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Var {
        let n = self.shape(x).len();
        assert!(n >= 2);
        let mut dims: Vec<usize> = (0..n).collect();
        dims.swap(n - 1, n - 2);
        self.permute(x, &dims)
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let xs = self.shape(x).to_vec();
        assert!(start + len <= xs[axis], "narrow out of range");
        let (outer, inner) = outer_inner(&xs, axis);
        let full = xs[axis];
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = o * full * inner + start * inner;
            data.extend_from_slice(&src[s..s + len * inner]);
        }
        let mut shape = xs.clone();
        shape[axis] = len;
        let value = Tensor::from_vec(&shape, data);
        self.push_op(value, &[x], Narrow { x, axis, start })
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty());
        let first = self.shape(parts[0]).to_vec();
        let (outer, inner) = outer_inner(&first, axis);
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            assert_eq!(s.len(), first.len());
            for (i, (&a, &b)) in s.iter().zip(&first).enumerate() {
                assert!(i == axis || a == b, "concat shape mismatch {s:?} vs {first:?}");
            }
            total += s[axis];
        }
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let src = self.value(p).data();
                data.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::from_vec(&shape, data);
        self.push_op(
            value,
            parts,
            Concat {
                parts: parts.to_vec(),
                axis,
            },
        )
    }

    /// Gathers rows along axis 0; rows may repeat.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let value = self.value(x).select_rows(rows);
        self.push_op(
            value,
            &[x],
            SelectRows {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push_op(value, &[x], SumAll { x, scale: 1.0 })
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let value = Tensor::scalar(self.value(x).sum() / n);
        self.push_op(value, &[x], SumAll { x, scale: 1.0 / n })
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let (outer, inner) = outer_inner(&xs, axis);
        let n = xs[axis];
        let src = self.value(x).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    data[o * inner + i] += src[(o * n + k) * inner + i];
                }
            }
        }
        let mut shape = xs;
        shape.remove(axis);
        let value = Tensor::from_vec(&shape, data);
        self.push_op(value, &[x], SumAxis { x, axis })
    }

    /// Nearest-neighbour 2x upsampling of an NCHW map.
    pub fn upsample_nearest2x(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4);
        let (nc, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let src = self.value(x).data();
        let mut data = vec![0.0; nc * 4 * h * w];
        for c in 0..nc {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    data[(c * 2 * h + y) * 2 * w + xx] = src[c * h * w + (y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::from_vec(&[xs[0], xs[1], 2 * h, 2 * w], data);
        self.push_op(value, &[x], Upsample2x { x })
    }
}
