//! Multi-scale deformable sampling.
//!
//! For every query and head, a softmax-weighted sum of bilinear samples taken
//! at fractional locations from several feature levels stored back to back in
//! one flattened value tensor.

use crate::graph::{Backward, Graph, Var};
use crate::tensor::Tensor;

/// Spatial layout of the flattened multi-level value sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelLayout {
    /// `(height, width)` per level.
    pub shapes: Vec<(usize, usize)>,
    /// Offset of each level's first position in the flattened sequence.
    pub starts: Vec<usize>,
}

impl LevelLayout {
    pub fn new(shapes: Vec<(usize, usize)>) -> Self {
        let mut starts = Vec::with_capacity(shapes.len());
        let mut acc = 0;
        for &(h, w) in &shapes {
            starts.push(acc);
            acc += h * w;
        }
        Self { shapes, starts }
    }

    pub fn num_levels(&self) -> usize {
        self.shapes.len()
    }

    /// Total flattened length.
    pub fn len(&self) -> usize {
        self.shapes.iter().map(|(h, w)| h * w).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Bilinear corner taps: flat positions within the level and their weights,
/// plus the weight derivatives with respect to the fractional pixel offsets.
struct Taps {
    idx: [Option<usize>; 4],
    w: [f64; 4],
    dwdx: [f64; 4],
    dwdy: [f64; 4],
}

fn taps(x: f64, y: f64, h: usize, w: usize) -> Taps {
    // grid-sample convention: pixel centers at (i + 0.5) / size
    let px = x * w as f64 - 0.5;
    let py = y * h as f64 - 0.5;
    let x0 = px.floor();
    let y0 = py.floor();
    let fx = px - x0;
    let fy = py - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let corners = [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)];
    let mut idx = [None; 4];
    for (k, &(cx, cy)) in corners.iter().enumerate() {
        if cx >= 0 && cy >= 0 && (cx as usize) < w && (cy as usize) < h {
            idx[k] = Some(cy as usize * w + cx as usize);
        }
    }
    Taps {
        idx,
        w: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
        dwdx: [-(1.0 - fy), 1.0 - fy, -fy, fy],
        dwdy: [-(1.0 - fx), -fx, 1.0 - fx, fx],
    }
}

struct Dims {
    q: usize,
    heads: usize,
    dh: usize,
    levels: usize,
    points: usize,
}

struct MsDeform {
    value: Var,
    loc: Var,
    attn: Var,
    layout: LevelLayout,
    dims: Dims,
}

impl Backward for MsDeform {
    fn backward(&self, g: &Graph, _out: Var, grad: &Tensor) -> Vec<(Var, Tensor)> {
        let Dims {
            q,
            heads,
            dh,
            levels,
            points,
        } = self.dims;
        let val = g.value(self.value).data();
        let loc = g.value(self.loc).data();
        let attn = g.value(self.attn).data();
        let gd = grad.data();
        let mut gval = vec![0.0; val.len()];
        let mut gloc = vec![0.0; loc.len()];
        let mut gattn = vec![0.0; attn.len()];
        let mut sample = vec![0.0; dh];
        for qi in 0..q {
            for h in 0..heads {
                let gout = &gd[(qi * heads + h) * dh..(qi * heads + h + 1) * dh];
                for l in 0..levels {
                    let (lh, lw) = self.layout.shapes[l];
                    let start = self.layout.starts[l];
                    for p in 0..points {
                        let a_idx = ((qi * heads + h) * levels + l) * points + p;
                        let (x, y) = (loc[2 * a_idx], loc[2 * a_idx + 1]);
                        let a = attn[a_idx];
                        let t = taps(x, y, lh, lw);
                        sample.fill(0.0);
                        let mut dx = 0.0;
                        let mut dy = 0.0;
                        for c in 0..4 {
                            let Some(pos) = t.idx[c] else { continue };
                            let base = ((start + pos) * heads + h) * dh;
                            let v = &val[base..base + dh];
                            let mut dot = 0.0;
                            for d in 0..dh {
                                sample[d] += t.w[c] * v[d];
                                dot += gout[d] * v[d];
                                gval[base + d] += a * t.w[c] * gout[d];
                            }
                            dx += t.dwdx[c] * dot;
                            dy += t.dwdy[c] * dot;
                        }
                        gattn[a_idx] = sample.iter().zip(gout).map(|(s, g)| s * g).sum();
                        gloc[2 * a_idx] = a * dx * lw as f64;
                        gloc[2 * a_idx + 1] = a * dy * lh as f64;
                    }
                }
            }
        }
        let mut out = Vec::new();
        if g.requires_grad(self.value) {
            out.push((self.value, Tensor::from_vec(g.shape(self.value), gval)));
        }
        if g.requires_grad(self.loc) {
            out.push((self.loc, Tensor::from_vec(g.shape(self.loc), gloc)));
        }
        if g.requires_grad(self.attn) {
            out.push((self.attn, Tensor::from_vec(g.shape(self.attn), gattn)));
        }
        out
    }
}

impl Graph {
    /// Deformable multi-level sampling.
    ///
    /// * `value`: `[S, heads, dh]` with `S = layout.len()`
    /// * `loc`: `[Q, heads, levels, points, 2]`, normalized `(x, y)`
    /// * `attn`: `[Q, heads, levels, points]`, already normalized
    ///
    /// Returns `[Q, heads * dh]`. Taps falling outside a level contribute zero.
    pub fn ms_deform_sample(&mut self, value: Var, layout: &LevelLayout, loc: Var, attn: Var) -> Var {
        let vs = self.shape(value).to_vec();
        let ls = self.shape(loc).to_vec();
        let as_ = self.shape(attn).to_vec();
        assert_eq!(vs.len(), 3, "value must be [S, heads, dh]");
        assert_eq!(vs[0], layout.len(), "value length does not match level layout");
        assert_eq!(ls.len(), 5, "loc must be [Q, heads, levels, points, 2]");
        assert_eq!(ls[4], 2);
        assert_eq!(&ls[..4], &as_[..], "loc/attn shape mismatch");
        assert_eq!(ls[1], vs[1], "head count mismatch");
        assert_eq!(ls[2], layout.num_levels(), "level count mismatch");
        let dims = Dims {
            q: ls[0],
            heads: vs[1],
            dh: vs[2],
            levels: ls[2],
            points: ls[3],
        };
        let val = self.value(value).data();
        let locv = self.value(loc).data();
        let attv = self.value(attn).data();
        let mut data = vec![0.0; dims.q * dims.heads * dims.dh];
        for qi in 0..dims.q {
            for h in 0..dims.heads {
                let out = &mut data[(qi * dims.heads + h) * dims.dh..(qi * dims.heads + h + 1) * dims.dh];
                for l in 0..dims.levels {
                    let (lh, lw) = layout.shapes[l];
                    let start = layout.starts[l];
                    for p in 0..dims.points {
                        let a_idx = ((qi * dims.heads + h) * dims.levels + l) * dims.points + p;
                        let a = attv[a_idx];
                        let t = taps(locv[2 * a_idx], locv[2 * a_idx + 1], lh, lw);
                        for c in 0..4 {
                            let Some(pos) = t.idx[c] else { continue };
                            let base = ((start + pos) * dims.heads + h) * dims.dh;
                            let wgt = a * t.w[c];
                            for d in 0..dims.dh {
                                out[d] += wgt * val[base + d];
                            }
                        }
                    }
                }
            }
        }
        let value_t = Tensor::from_vec(&[dims.q, dims.heads * dims.dh], data);
        self.push_op(
            value_t,
            &[value, loc, attn],
            MsDeform {
                value,
                loc,
                attn,
                layout: layout.clone(),
                dims,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_offsets_are_prefix_sums() {
        let l = LevelLayout::new(vec![(80, 80), (40, 40), (20, 20)]);
        assert_eq!(l.starts, vec![0, 6400, 8000]);
        assert_eq!(l.len(), 8400);
    }

    #[test]
    fn lattice_point_returns_cell() {
        // 2x3 level, one head, dh=2; value at position p is (p, 10p)
        let layout = LevelLayout::new(vec![(2, 3)]);
        let val: Vec<f64> = (0..6).flat_map(|p| [p as f64, 10.0 * p as f64]).collect();
        let mut g = Graph::new();
        let v = g.constant(Tensor::from_vec(&[6, 1, 2], val));
        // center of cell (row 1, col 2) → position 5
        let loc = g.constant(Tensor::from_vec(&[1, 1, 1, 1, 2], vec![2.5 / 3.0, 1.5 / 2.0]));
        let a = g.constant(Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]));
        let out = g.ms_deform_sample(v, &layout, loc, a);
        let o = g.value(out).data();
        assert!((o[0] - 5.0).abs() < 1e-12 && (o[1] - 50.0).abs() < 1e-12);
    }

    #[test]
    fn outside_samples_vanish() {
        let layout = LevelLayout::new(vec![(2, 2)]);
        let mut g = Graph::new();
        let v = g.constant(Tensor::ones(&[4, 1, 1]));
        let loc = g.constant(Tensor::from_vec(&[1, 1, 1, 1, 2], vec![5.0, -3.0]));
        let a = g.constant(Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]));
        let out = g.ms_deform_sample(v, &layout, loc, a);
        assert_eq!(g.value(out).data(), &[0.0]);
    }
}
