//! Hybrid encoder: projection of the pyramid to a common width, one
//! self-attention block on the coarsest map, cross-scale fusion and
//! flattening into a single memory sequence.

use querytrack_autograd::{LevelLayout, Tensor, Var};

use crate::backbone::{c2f, init_c2f};
use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::nn::{Ctx, Init};

pub const TEMPERATURE: f64 = 10_000.0;

/// Flattened multi-level memory of one image.
#[derive(Clone, Debug)]
pub struct EncoderMemory {
    /// `[S, D]`, levels at strides 8, 16, 32 in order.
    pub values: Var,
    pub layout: LevelLayout,
    /// Fraction of each level covered by image content (no padding is used).
    pub valid_ratios: [[f64; 2]; 3],
}

/// Fixed 2-D sine/cosine encoding, `[h·w, dim]` in row-major grid order:
/// `[sin(x·ω), cos(x·ω), sin(y·ω), cos(y·ω)]` with `ω_i = T^(−i/(dim/4))`.
pub fn sine_position_embedding(h: usize, w: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || dim % 4 != 0 {
        return Err(ModelError::Config(format!(
            "position embedding width {dim} must be a positive multiple of 4"
        )));
    }
    let q = dim / 4;
    let omega: Vec<f64> = (0..q).map(|i| TEMPERATURE.powf(-(i as f64) / q as f64)).collect();
    let mut data = Vec::with_capacity(h * w * dim);
    for y in 0..h {
        for x in 0..w {
            for (coord, _) in [(x as f64, 0), (y as f64, 1)] {
                data.extend(omega.iter().map(|o| (coord * o).sin()));
                data.extend(omega.iter().map(|o| (coord * o).cos()));
            }
        }
    }
    Ok(Tensor::from_vec(&[h * w, dim], data))
}

pub fn init(init: &mut Init, cfg: &ModelConfig) {
    let d = cfg.hidden_dim;
    for (k, &c) in cfg.stage_widths[1..].iter().enumerate() {
        init.conv_bn(&format!("encoder.proj{k}"), c, d, 1);
    }
    init.layer_norm("encoder.aifi.ln1", d);
    init.attention("encoder.aifi.attn", d);
    init.layer_norm("encoder.aifi.ln2", d);
    init.ffn("encoder.aifi.ffn", d, d * cfg.ffn_ratio);
    let n = cfg.neck_depth;
    init.conv_bn("encoder.lateral32", d, d, 1);
    init_c2f(init, "encoder.fuse16", 2 * d, d, n);
    init.conv_bn("encoder.lateral16", d, d, 1);
    init_c2f(init, "encoder.fuse8", 2 * d, d, n);
    init.conv_bn("encoder.down8", d, d, 3);
    init_c2f(init, "encoder.pan16", 2 * d, d, n);
    init.conv_bn("encoder.down16", d, d, 3);
    init_c2f(init, "encoder.pan32", 2 * d, d, n);
}

/// Pre-norm transformer block over a token sequence `[T, D]`.
pub fn aifi(ctx: &mut Ctx, tokens: Var, pos: Var, heads: usize) -> Var {
    let normed = ctx.layer_norm("encoder.aifi.ln1", tokens);
    let qk = ctx.g.add(normed, pos);
    let attn = ctx.attention("encoder.aifi.attn", qk, qk, normed, heads);
    let x = ctx.g.add(tokens, attn);
    let normed = ctx.layer_norm("encoder.aifi.ln2", x);
    let f = ctx.ffn("encoder.aifi.ffn", normed);
    ctx.g.add(x, f)
}

/// `[1, D, H, W]` ↔ `[H·W, D]`.
fn to_tokens(ctx: &mut Ctx, map: Var) -> Var {
    let s = ctx.g.shape(map).to_vec();
    let flat = ctx.g.reshape(map, &[s[1], s[2] * s[3]]);
    ctx.g.transpose(flat)
}

fn to_map(ctx: &mut Ctx, tokens: Var, h: usize, w: usize) -> Var {
    let d = ctx.g.shape(tokens)[1];
    let t = ctx.g.transpose(tokens);
    ctx.g.reshape(t, &[1, d, h, w])
}

/// Encodes a batch of pyramids (`[N, C_k, H_k, W_k]` each) into one memory
/// per image.
pub fn forward(ctx: &mut Ctx, cfg: &ModelConfig, pyramid: [Var; 3]) -> Result<Vec<EncoderMemory>> {
    let d = cfg.hidden_dim;
    let projected: Vec<Var> = pyramid
        .iter()
        .enumerate()
        .map(|(k, &m)| ctx.conv_bn(&format!("encoder.proj{k}"), m, 1, true))
        .collect();
    let s32 = ctx.g.shape(projected[2]).to_vec();
    let (n, h32, w32) = (s32[0], s32[2], s32[3]);
    let pos = sine_position_embedding(h32, w32, d)?;
    let pos = ctx.g.constant(pos);

    let mut attended = Vec::with_capacity(n);
    for i in 0..n {
        let one = ctx.g.narrow(projected[2], 0, i, 1);
        let tokens = to_tokens(ctx, one);
        let tokens = aifi(ctx, tokens, pos, cfg.encoder_heads);
        attended.push(to_map(ctx, tokens, h32, w32));
    }
    let f32_ = ctx.g.concat(&attended, 0);
    let nd = cfg.neck_depth;

    let lat32 = ctx.conv_bn("encoder.lateral32", f32_, 1, true);
    let up = ctx.g.upsample_nearest2x(lat32);
    let cat = ctx.g.concat(&[up, projected[1]], 1);
    let m16 = c2f(ctx, "encoder.fuse16", cat, nd, false);
    let lat16 = ctx.conv_bn("encoder.lateral16", m16, 1, true);
    let up = ctx.g.upsample_nearest2x(lat16);
    let cat = ctx.g.concat(&[up, projected[0]], 1);
    let out8 = c2f(ctx, "encoder.fuse8", cat, nd, false);
    let down = ctx.conv_bn("encoder.down8", out8, 2, true);
    let cat = ctx.g.concat(&[down, lat16], 1);
    let out16 = c2f(ctx, "encoder.pan16", cat, nd, false);
    let down = ctx.conv_bn("encoder.down16", out16, 2, true);
    let cat = ctx.g.concat(&[down, lat32], 1);
    let out32 = c2f(ctx, "encoder.pan32", cat, nd, false);

    let maps = [out8, out16, out32];
    let shapes: Vec<(usize, usize)> = maps
        .iter()
        .map(|&m| {
            let s = ctx.g.shape(m);
            (s[2], s[3])
        })
        .collect();
    let layout = LevelLayout::new(shapes);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let levels: Vec<Var> = maps
            .iter()
            .map(|&m| {
                let one = ctx.g.narrow(m, 0, i, 1);
                to_tokens(ctx, one)
            })
            .collect();
        out.push(EncoderMemory {
            values: ctx.g.concat(&levels, 0),
            layout: layout.clone(),
            valid_ratios: [[1.0; 2]; 3],
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use querytrack_autograd::{init::Initializer, Graph, ParamStore};

    #[test]
    fn sine_embedding_contract() {
        let p = sine_position_embedding(3, 5, 8).unwrap();
        assert_eq!(p.shape(), &[15, 8]);
        assert!(p.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(p, sine_position_embedding(3, 5, 8).unwrap());
        // (0, 0): sine slots are zero, cosine slots one
        assert_eq!(&p.row(0)[..2], &[0.0, 0.0]);
        assert_eq!(&p.row(0)[2..4], &[1.0, 1.0]);
        assert!(sine_position_embedding(2, 2, 6).is_err());
    }

    #[test]
    fn single_token_block_residual_arithmetic() {
        // one head, one token: attention weight is 1, so the block is
        // x + o(v(ln1(x))) followed by the feed-forward residual
        let d = 4;
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, 3);
        init.layer_norm("encoder.aifi.ln1", d);
        init.attention("encoder.aifi.attn", d);
        init.layer_norm("encoder.aifi.ln2", d);
        init.ffn("encoder.aifi.ffn", d, 8);
        let mut eye = Tensor::zeros(&[d, d]);
        for i in 0..d {
            eye.set(&[i, i], 1.0);
        }
        *store.get_mut("encoder.aifi.attn.v.w").unwrap() = eye.clone();
        *store.get_mut("encoder.aifi.attn.o.w").unwrap() = eye;
        let x = [0.3, -1.2, 2.0, 0.5];
        let mut g = Graph::inference();
        let tok = g.constant(Tensor::from_vec(&[1, d], x.to_vec()));
        let pos = g.constant(Tensor::zeros(&[1, d]));
        let mut ctx = Ctx::new(&mut g, &store, false);
        let out = aifi(&mut ctx, tok, pos, 1);
        let got = ctx.g.value(out).data().to_vec();

        let ln = |v: &[f64]| -> Vec<f64> {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / v.len() as f64;
            v.iter().map(|a| (a - m) / (var + crate::nn::LN_EPS).sqrt()).collect()
        };
        let h: Vec<f64> = x.iter().zip(ln(&x)).map(|(a, b)| a + b).collect();
        let n2 = ln(&h);
        let (w1, w2) = (store.get("encoder.aifi.ffn.fc1.w").unwrap(), store.get("encoder.aifi.ffn.fc2.w").unwrap());
        let hidden: Vec<f64> = (0..8)
            .map(|j| (0..d).map(|i| n2[i] * w1.at(&[i, j])).sum::<f64>().max(0.0))
            .collect();
        for k in 0..d {
            let f: f64 = (0..8).map(|j| hidden[j] * w2.at(&[j, k])).sum();
            assert!((got[k] - (h[k] + f)).abs() < 1e-12);
        }
    }

    #[test]
    fn memory_offsets_partition_the_sequence() {
        let cfg = ModelConfig::tiny();
        let mut store = ParamStore::new();
        let mut init_ = Init::new(&mut store, 0);
        crate::backbone::init(&mut init_, &cfg);
        init(&mut init_, &cfg);
        for (i, (h, w)) in [(64, 64), (96, 64), (64, 128), (32, 32), (128, 96)].into_iter().enumerate() {
            let mut g = Graph::inference();
            let x = g.constant(Initializer::new(i as u64).uniform(&[2, 3, h, w], 1.0));
            let mut ctx = Ctx::new(&mut g, &store, false);
            let pyr = crate::backbone::forward(&mut ctx, &cfg, x);
            let mem = forward(&mut ctx, &cfg, pyr).unwrap();
            assert_eq!(mem.len(), 2);
            let expect = [(h / 8, w / 8), (h / 16, w / 16), (h / 32, w / 32)];
            assert_eq!(mem[0].layout.shapes, expect.to_vec());
            let total: usize = expect.iter().map(|(a, b)| a * b).sum();
            assert_eq!(mem[0].layout.starts, vec![0, expect[0].0 * expect[0].1, expect[0].0 * expect[0].1 + expect[1].0 * expect[1].1]);
            assert_eq!(ctx.g.shape(mem[1].values), &[total, cfg.hidden_dim]);
        }
    }
}
