//! CSP-style convolutional trunk and the top-down/bottom-up fusion neck.

use querytrack_autograd::Var;

use crate::config::ModelConfig;
use crate::nn::{Ctx, Init};

pub(crate) fn init_c2f(init: &mut Init, name: &str, c_in: usize, c_out: usize, depth: usize) {
    let c = c_out / 2;
    init.conv_bn(&format!("{name}.cv1"), c_in, c_out, 1);
    for i in 0..depth {
        init.conv_bn(&format!("{name}.m{i}.cv1"), c, c, 3);
        init.conv_bn(&format!("{name}.m{i}.cv2"), c, c, 3);
    }
    init.conv_bn(&format!("{name}.cv2"), (2 + depth) * c, c_out, 1);
}

/// Split-merge block: half the channels pass straight through, the other half
/// runs a chain of bottlenecks whose every output joins the final merge.
pub(crate) fn c2f(ctx: &mut Ctx, name: &str, x: Var, depth: usize, shortcut: bool) -> Var {
    let y = ctx.conv_bn(&format!("{name}.cv1"), x, 1, true);
    let c = ctx.g.shape(y)[1] / 2;
    let mut parts = vec![ctx.g.narrow(y, 1, 0, c), ctx.g.narrow(y, 1, c, c)];
    for i in 0..depth {
        let prev = *parts.last().unwrap();
        let h = ctx.conv_bn(&format!("{name}.m{i}.cv1"), prev, 1, true);
        let h = ctx.conv_bn(&format!("{name}.m{i}.cv2"), h, 1, true);
        parts.push(if shortcut { ctx.g.add(prev, h) } else { h });
    }
    let cat = ctx.g.concat(&parts, 1);
    ctx.conv_bn(&format!("{name}.cv2"), cat, 1, true)
}

pub fn init(init: &mut Init, cfg: &ModelConfig) {
    let w = cfg.stage_widths;
    init.conv_bn("backbone.stem", 3, cfg.stem_channels, 3);
    let mut prev = cfg.stem_channels;
    for (i, (&width, &depth)) in w.iter().zip(&cfg.stage_depths).enumerate() {
        init.conv_bn(&format!("backbone.stage{i}.down"), prev, width, 3);
        init_c2f(init, &format!("backbone.stage{i}.c2f"), width, width, depth);
        prev = width;
    }
    let (c8, c16, c32) = (w[1], w[2], w[3]);
    let n = cfg.neck_depth;
    init_c2f(init, "neck.td16", c32 + c16, c16, n);
    init_c2f(init, "neck.td8", c16 + c8, c8, n);
    init.conv_bn("neck.down8", c8, c8, 3);
    init_c2f(init, "neck.bu16", c8 + c16, c16, n);
    init.conv_bn("neck.down16", c16, c16, 3);
    init_c2f(init, "neck.bu32", c16 + c32, c32, n);
}

/// `image: [N, 3, H, W]` in `[0, 1]` → maps at strides 8, 16, 32.
pub fn forward(ctx: &mut Ctx, cfg: &ModelConfig, image: Var) -> [Var; 3] {
    let mut x = ctx.conv_bn("backbone.stem", image, 2, true);
    let mut taps = Vec::with_capacity(4);
    for (i, &depth) in cfg.stage_depths.iter().enumerate() {
        x = ctx.conv_bn(&format!("backbone.stage{i}.down"), x, 2, true);
        x = c2f(ctx, &format!("backbone.stage{i}.c2f"), x, depth, true);
        taps.push(x);
    }
    let (p8, p16, p32) = (taps[1], taps[2], taps[3]);
    let n = cfg.neck_depth;

    let up = ctx.g.upsample_nearest2x(p32);
    let cat = ctx.g.concat(&[up, p16], 1);
    let t16 = c2f(ctx, "neck.td16", cat, n, false);
    let up = ctx.g.upsample_nearest2x(t16);
    let cat = ctx.g.concat(&[up, p8], 1);
    let out8 = c2f(ctx, "neck.td8", cat, n, false);

    let down = ctx.conv_bn("neck.down8", out8, 2, true);
    let cat = ctx.g.concat(&[down, t16], 1);
    let out16 = c2f(ctx, "neck.bu16", cat, n, false);
    let down = ctx.conv_bn("neck.down16", out16, 2, true);
    let cat = ctx.g.concat(&[down, p32], 1);
    let out32 = c2f(ctx, "neck.bu32", cat, n, false);
    [out8, out16, out32]
}
