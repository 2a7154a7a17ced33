//! Broadcasting binary ops and pointwise unary ops.

use crate::graph::{Backward, Graph, Var};
use crate::tensor::{strides, Tensor};

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => panic!("cannot broadcast {a:?} with {b:?}"),
        };
    }
    out
}

/// For every flat index of `out_shape`, the flat index into a tensor of
/// `in_shape` broadcast to it. `None` when no broadcasting happens.
pub(crate) fn broadcast_map(in_shape: &[usize], out_shape: &[usize]) -> Option<Vec<usize>> {
    if in_shape == out_shape {
        return None;
    }
    let n = out_shape.len();
    let lead = n - in_shape.len();
    let in_strides = strides(in_shape);
    // effective stride per output axis (0 on broadcast axes)
    let eff: Vec<usize> = (0..n)
        .map(|i| {
            if i < lead || in_shape[i - lead] == 1 {
                0
            } else {
                in_strides[i - lead]
            }
        })
        .collect();
    let total: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    let mut off = 0usize;
    for _ in 0..total {
        map.push(off);
        for ax in (0..n).rev() {
            idx[ax] += 1;
            off += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Some(map)
}

fn reduce_to(grad: &[f64], map: &Option<Vec<usize>>, shape: &[usize]) -> Tensor {
    match map {
        None => Tensor::from_vec(shape, grad.to_vec()),
        Some(m) => {
            let mut out = vec![0.0; shape.iter().product()];
            for (g, &i) in grad.iter().zip(m) {
                out[i] += g;
            }
            Tensor::from_vec(shape, out)
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
}

struct Binary {
    kind: BinKind,
    a: Var,
    b: Var,
    map_a: Option<Vec<usize>>,
    map_b: Option<Vec<usize>>,
}

#[inline]
fn fetch(data: &[f64], map: &Option<Vec<usize>>, i: usize) -> f64 {
    match map {
        None => data[i],
        Some(m) => data[m[i]],
    }
}

impl Backward for Binary {
    fn backward(&self, g: &Graph, _out: Var, grad: &Tensor) -> Vec<(Var, Tensor)> {
        let av = g.value(self.a).data();
        let bv = g.value(self.b).data();
        let n = grad.len();
        let gd = grad.data();
        let (mut ga, mut gb) = (vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let x = fetch(av, &self.map_a, i);
            let y = fetch(bv, &self.map_b, i);
            let (da, db) = match self.kind {
                BinKind::Add => (1.0, 1.0),
                BinKind::Sub => (1.0, -1.0),
                BinKind::Mul => (y, x),
                BinKind::Div => (1.0 / y, -x / (y * y)),
                // ties route the gradient to the first operand
                BinKind::Max => {
                    if x >= y {
                        (1.0, 0.0)
                    } else {
                        (0.0, 1.0)
                    }
                }
                BinKind::Min => {
                    if x <= y {
                        (1.0, 0.0)
                    } else {
                        (0.0, 1.0)
                    }
                }
            };
            ga[i] = gd[i] * da;
            gb[i] = gd[i] * db;
        }
        let mut out = Vec::with_capacity(2);
        if g.requires_grad(self.a) {
            out.push((self.a, reduce_to(&ga, &self.map_a, g.shape(self.a))));
        }
        if g.requires_grad(self.b) {
            out.push((self.b, reduce_to(&gb, &self.map_b, g.shape(self.b))));
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
enum UnKind {
    Neg,
    Scale(f64),
    AddConst(f64),
    Exp,
    Log,
    Sigmoid,
    Silu,
    Relu,
    Abs,
    Softplus,
    Sqrt,
    Powf(f64),
    InverseSigmoid(f64),
}

struct Unary {
    kind: UnKind,
    x: Var,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn apply(kind: UnKind, x: f64) -> f64 {
    match kind {
        UnKind::Neg => -x,
        UnKind::Scale(s) => s * x,
        UnKind::AddConst(c) => x + c,
        UnKind::Exp => x.exp(),
        UnKind::Log => x.ln(),
        UnKind::Sigmoid => sigmoid(x),
        UnKind::Silu => x * sigmoid(x),
        UnKind::Relu => x.max(0.0),
        UnKind::Abs => x.abs(),
        UnKind::Softplus => softplus(x),
        UnKind::Sqrt => x.sqrt(),
        UnKind::Powf(p) => x.powf(p),
        UnKind::InverseSigmoid(eps) => {
            let c = x.clamp(0.0, 1.0);
            (c.max(eps) / (1.0 - c).max(eps)).ln()
        }
    }
}

fn derivative(kind: UnKind, x: f64, y: f64) -> f64 {
    match kind {
        UnKind::Neg => -1.0,
        UnKind::Scale(s) => s,
        UnKind::AddConst(_) => 1.0,
        UnKind::Exp => y,
        UnKind::Log => 1.0 / x,
        UnKind::Sigmoid => y * (1.0 - y),
        UnKind::Silu => {
            let s = sigmoid(x);
            s * (1.0 + x * (1.0 - s))
        }
        UnKind::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        UnKind::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        UnKind::Softplus => sigmoid(x),
        UnKind::Sqrt => 0.5 / y,
        UnKind::Powf(p) => {
            if p == 0.0 {
                0.0
            } else {
                p * x.powf(p - 1.0)
            }
        }
        UnKind::InverseSigmoid(eps) => {
            let c = x.clamp(0.0, 1.0);
            let da = if c > eps { 1.0 / c } else { 0.0 };
            let db = if 1.0 - c > eps { 1.0 / (1.0 - c) } else { 0.0 };
            if (0.0..=1.0).contains(&x) {
                da + db
            } else {
                0.0
            }
        }
    }
}

impl Backward for Unary {
    fn backward(&self, g: &Graph, out: Var, grad: &Tensor) -> Vec<(Var, Tensor)> {
        let x = g.value(self.x).data();
        let y = g.value(out).data();
        let data = grad
            .data()
            .iter()
            .zip(x.iter().zip(y))
            .map(|(&gr, (&xi, &yi))| gr * derivative(self.kind, xi, yi))
            .collect();
        vec![(self.x, Tensor::from_vec(g.shape(self.x), data))]
    }
}

impl Graph {
    fn binary(&mut self, kind: BinKind, a: Var, b: Var) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(&sa, &sb);
        let map_a = broadcast_map(&sa, &out_shape);
        let map_b = broadcast_map(&sb, &out_shape);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let n: usize = out_shape.iter().product();
        let f = |x: f64, y: f64| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
            BinKind::Div => x / y,
            BinKind::Max => x.max(y),
            BinKind::Min => x.min(y),
        };
        let data: Vec<f64> = (0..n)
            .map(|i| f(fetch(av, &map_a, i), fetch(bv, &map_b, i)))
            .collect();
        let value = Tensor::from_vec(&out_shape, data);
        let needs = self.is_recording() && (self.requires_grad(a) || self.requires_grad(b));
        let (map_a, map_b) = if needs { (map_a, map_b) } else { (None, None) };
        self.push_op(
            value,
            &[a, b],
            Binary {
                kind,
                a,
                b,
                map_a,
                map_b,
            },
        )
    }

    fn unary(&mut self, kind: UnKind, x: Var) -> Var {
        let value = self.value(x).map(|v| apply(kind, v));
        self.push_op(value, &[x], Unary { kind, x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinKind::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinKind::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinKind::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinKind::Div, a, b)
    }
    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinKind::Max, a, b)
    }
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinKind::Min, a, b)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(UnKind::Neg, x)
    }
    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(UnKind::Scale(s), x)
    }
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(UnKind::AddConst(c), x)
    }
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnKind::Exp, x)
    }
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(UnKind::Log, x)
    }
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnKind::Sigmoid, x)
    }
    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(UnKind::Silu, x)
    }
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnKind::Relu, x)
    }
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(UnKind::Abs, x)
    }
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(UnKind::Softplus, x)
    }
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(UnKind::Sqrt, x)
    }
    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        self.unary(UnKind::Powf(p), x)
    }
    /// `ln(x / (1 - x))` with both terms clamped below by `eps`.
    pub fn inverse_sigmoid(&mut self, x: Var, eps: f64) -> Var {
        self.unary(UnKind::InverseSigmoid(eps), x)
    }
}

/// Numerically stable logistic function.
pub fn sigmoid_f64(x: f64) -> f64 {
    sigmoid(x)
}

/// Scalar counterpart of [`Graph::inverse_sigmoid`].
pub fn inverse_sigmoid_f64(x: f64, eps: f64) -> f64 {
    apply(UnKind::InverseSigmoid(eps), x)
}
