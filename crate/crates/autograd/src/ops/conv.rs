//! 2-D convolution (im2col + GEMM) and per-channel batch normalization.

use crate::graph::{Backward, Graph, Var};
use crate::ops::linalg::gemm;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let hw = g.ho * g.wo;
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[oy * g.wo + ox] = if iy >= 0
                            && (iy as usize) < g.h
                            && ix >= 0
                            && (ix as usize) < g.w
                        {
                            x[(c * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let hw = g.ho * g.wo;
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix as usize >= g.w {
                            continue;
                        }
                        dx[(c * g.h + iy as usize) * g.w + ix as usize] += src[oy * g.wo + ox];
                    }
                }
            }
        }
    }
}

struct Conv2d {
    x: Var,
    w: Var,
    geom: ConvGeom,
}

impl Backward for Conv2d {
    fn backward(&self, g: &Graph, _out: Var, grad: &Tensor) -> Vec<(Var, Tensor)> {
        let geo = self.geom;
        let xs = g.shape(self.x).to_vec();
        let ws = g.shape(self.w).to_vec();
        let (n, o) = (xs[0], ws[0]);
        let ckk = geo.c * geo.kh * geo.kw;
        let hw = geo.ho * geo.wo;
        let xv = g.value(self.x).data();
        let wv = g.value(self.w).data();
        let gd = grad.data();
        let need_x = g.requires_grad(self.x);
        let need_w = g.requires_grad(self.w);
        let mut gw = vec![0.0; o * ckk];
        let mut gx = vec![0.0; if need_x { xv.len() } else { 0 }];
        let mut cols = vec![0.0; if geo.is_pointwise() { 0 } else { ckk * hw }];
        let img = geo.c * geo.h * geo.w;
        for b in 0..n {
            let gout = &gd[b * o * hw..(b + 1) * o * hw];
            if need_w {
                let colv: &[f64] = if geo.is_pointwise() {
                    &xv[b * img..(b + 1) * img]
                } else {
                    im2col(&xv[b * img..(b + 1) * img], &geo, &mut cols);
                    &cols
                };
                // dW += dOut · colsᵀ
                gemm(
                    o,
                    hw,
                    ckk,
                    gout,
                    (hw as isize, 1),
                    colv,
                    (1, hw as isize),
                    &mut gw,
                    true,
                );
            }
            if need_x {
                let dst = &mut gx[b * img..(b + 1) * img];
                if geo.is_pointwise() {
                    gemm(
                        ckk,
                        o,
                        hw,
                        wv,
                        (1, ckk as isize),
                        gout,
                        (hw as isize, 1),
                        dst,
                        true,
                    );
                } else {
                    let mut dcols = vec![0.0; ckk * hw];
                    gemm(
                        ckk,
                        o,
                        hw,
                        wv,
                        (1, ckk as isize),
                        gout,
                        (hw as isize, 1),
                        &mut dcols,
                        false,
                    );
                    col2im(&dcols, &geo, dst);
                }
            }
        }
        let mut out = Vec::new();
        if need_x {
            out.push((self.x, Tensor::from_vec(&xs, gx)));
        }
        if need_w {
            out.push((self.w, Tensor::from_vec(&ws, gw)));
        }
        out
    }
}

/// Batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for running estimates.
    pub var: Vec<f64>,
}

struct BatchNorm {
    x: Var,
    gamma: Var,
    beta: Var,
    // normalized input and per-channel 1/sigma
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    // batch statistics participate in the derivative only in training mode
    training: bool,
}

impl Backward for BatchNorm {
    fn backward(&self, g: &Graph, _out: Var, grad: &Tensor) -> Vec<(Var, Tensor)> {
        let xs = g.shape(self.x).to_vec();
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let gamma = g.value(self.gamma).data();
        let gd = grad.data();
        let cnt = (n * hw) as f64;
        let mut gx = vec![0.0; gd.len()];
        let mut gg = vec![0.0; c];
        let mut gb = vec![0.0; c];
        for ch in 0..c {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for b in 0..n {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    sum_g += gd[i];
                    sum_gx += gd[i] * self.xhat[i];
                }
            }
            gg[ch] = sum_gx;
            gb[ch] = sum_g;
            let is = self.inv_std[ch];
            for b in 0..n {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    gx[i] = if self.training {
                        gamma[ch] * is * (gd[i] - sum_g / cnt - self.xhat[i] * sum_gx / cnt)
                    } else {
                        gamma[ch] * is * gd[i]
                    };
                }
            }
        }
        let mut out = Vec::new();
        if g.requires_grad(self.x) {
            out.push((self.x, Tensor::from_vec(&xs, gx)));
        }
        if g.requires_grad(self.gamma) {
            out.push((self.gamma, Tensor::from_vec(&[c], gg)));
        }
        if g.requires_grad(self.beta) {
            out.push((self.beta, Tensor::from_vec(&[c], gb)));
        }
        out
    }
}

impl Graph {
    /// Cross-correlation of an NCHW input with `[out, in, kh, kw]` weights.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 4, "conv2d input must be NCHW");
        assert_eq!(ws.len(), 4, "conv2d weight must be OIHW");
        assert_eq!(xs[1], ws[1], "conv2d channel mismatch {xs:?} vs {ws:?}");
        assert!(stride >= 1);
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        assert!(h + 2 * pad >= kh && wd + 2 * pad >= kw, "kernel larger than padded input");
        let geom = ConvGeom {
            c,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (wd + 2 * pad - kw) / stride + 1,
        };
        let ckk = c * kh * kw;
        let hw = geom.ho * geom.wo;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut data = vec![0.0; n * o * hw];
        let mut cols = vec![0.0; if geom.is_pointwise() { 0 } else { ckk * hw }];
        let img = c * h * wd;
        for b in 0..n {
            let colv: &[f64] = if geom.is_pointwise() {
                &xv[b * img..(b + 1) * img]
            } else {
                im2col(&xv[b * img..(b + 1) * img], &geom, &mut cols);
                &cols
            };
            gemm(
                o,
                ckk,
                hw,
                wv,
                (ckk as isize, 1),
                colv,
                (hw as isize, 1),
                &mut data[b * o * hw..(b + 1) * o * hw],
                false,
            );
        }
        let value = Tensor::from_vec(&[n, o, geom.ho, geom.wo], data);
        self.push_op(value, &[x, w], Conv2d { x, w, geom })
    }

    /// Batch normalization of an NCHW map.
    ///
    /// With `running = None` the batch's own statistics normalize the input
    /// (training mode) and are returned for the caller's running estimate.
    /// With `running = Some((mean, var))` the frozen statistics are used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> (Var, Option<BatchStats>) {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4);
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let cnt = n * hw;
        let xv = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let training = running.is_none();
        match running {
            Some((rm, rv)) => {
                mean.copy_from_slice(rm);
                var.copy_from_slice(rv);
            }
            None => {
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        let base = (b * c + ch) * hw;
                        s += xv[base..base + hw].iter().sum::<f64>();
                    }
                    let m = s / cnt as f64;
                    let mut v = 0.0;
                    for b in 0..n {
                        let base = (b * c + ch) * hw;
                        v += xv[base..base + hw].iter().map(|t| (t - m) * (t - m)).sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = v / cnt as f64;
                }
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut data = vec![0.0; xv.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    let h = (xv[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    data[i] = gv[ch] * h + bv[ch];
                }
            }
        }
        let stats = training.then(|| BatchStats {
            var: var
                .iter()
                .map(|v| if cnt > 1 { v * cnt as f64 / (cnt - 1) as f64 } else { *v })
                .collect(),
            mean,
        });
        let value = Tensor::from_vec(&xs, data);
        let out = self.push_op(
            value,
            &[x, gamma, beta],
            BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            },
        );
        (out, stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[n, o, ho, wo]);
        for b in 0..n {
            for oc in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = 0.0;
                        for ic in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        s += x.at(&[b, ic, iy as usize, ix as usize])
                                            * w.at(&[oc, ic, ky, kx]);
                                    }
                                }
                            }
                        }
                        out.set(&[b, oc, oy, ox], s);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let x = Tensor::from_vec(&[2, 3, 5, 6], (0..180).map(|i| ((i * 7) % 11) as f64 - 5.0).collect());
        let w = Tensor::from_vec(&[4, 3, 3, 3], (0..108).map(|i| ((i * 5) % 7) as f64 - 3.0).collect());
        for &(s, p) in &[(1, 1), (2, 1), (1, 0), (2, 0)] {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let wv = g.constant(w.clone());
            let y = g.conv2d(xv, wv, s, p);
            assert_eq!(g.value(y), &naive_conv(&x, &w, s, p), "stride {s} pad {p}");
        }
    }

    #[test]
    fn batch_norm_training_output_is_standardized() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(&[1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 10.0, 10.0, 20.0, 20.0]));
        let gamma = g.input(Tensor::ones(&[2]));
        let beta = g.input(Tensor::zeros(&[2]));
        let (y, stats) = g.batch_norm(x, gamma, beta, None, 0.0);
        let stats = stats.unwrap();
        assert_eq!(stats.mean, vec![2.5, 15.0]);
        let v = g.value(y).data();
        assert!((v[..4].iter().sum::<f64>()).abs() < 1e-12);
        assert!((v[..4].iter().map(|t| t * t).sum::<f64>() - 4.0).abs() < 1e-9);
    }
}
