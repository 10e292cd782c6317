//! Siamese feature extraction: a strided stem, residual blocks at half
//! resolution, then residual blocks at quarter resolution.

use crate::autodiff::{ConvSpec, Var};
use crate::error::{Error, Result};
use crate::params::Ctx;
use crate::tensor::Real;

use super::config::{ModelConfig, INPUT_MULTIPLE};

/// Pre-activation residual block: `x + conv2(elu(conv1(elu(x))))`.
///
/// With `stride` 2 or a width change the shortcut becomes a 1x1 projection
/// (`{name}.proj`) with the same stride. Zero branch weights make the
/// identity-shortcut variant an exact identity.
pub fn residual_block<T: Real>(ctx: &mut Ctx<'_, T>, name: &str, x: Var, out: usize, stride: usize) -> Result<Var> {
    let cin = ctx.channels(x);
    let h = ctx.elu(x)?;
    let h = ctx.conv(&format!("{name}.conv1"), h, &ConvSpec::strided(cin, out, 3, stride))?;
    let h = ctx.elu(h)?;
    let h = ctx.conv(&format!("{name}.conv2"), h, &ConvSpec::same(out, out, 3, 1))?;
    let shortcut = if stride == 1 && cin == out {
        x
    } else {
        ctx.conv(&format!("{name}.proj"), x, &ConvSpec { stride, ..ConvSpec::pointwise(cin, out) })?
    };
    ctx.graph.add(shortcut, h)
}

pub struct Features {
    pub half: Var,
    pub quarter: Var,
}

/// Features for one view. Both views go through this with the same names,
/// so they share parameters.
pub fn extract_view<T: Real>(ctx: &mut Ctx<'_, T>, cfg: &ModelConfig, image: Var) -> Result<Features> {
    let [_, c, h, w] = ctx.graph.value(image).dims4("feature_extract")?;
    if c != cfg.in_channels {
        return Err(Error::config(format!("model expects {} image channels, got {c}", cfg.in_channels)));
    }
    if h % INPUT_MULTIPLE != 0 || w % INPUT_MULTIPLE != 0 || h == 0 || w == 0 {
        return Err(Error::config(format!(
            "input {h}x{w} is not a multiple of {INPUT_MULTIPLE}; pad or crop it (infer has --auto-pad)"
        )));
    }
    let mut x = ctx.conv("feat.stem", image, &ConvSpec::strided(c, cfg.base_width, 3, 2))?;
    for i in 0..cfg.res_blocks_half {
        x = residual_block(ctx, &format!("feat.half{}", i + 1), x, cfg.base_width, 1)?;
    }
    let half = x;
    // The first quarter-scale block does the downsampling.
    x = residual_block(ctx, "feat.quarter1", x, cfg.feature_width, 2)?;
    for i in 1..cfg.res_blocks_quarter {
        x = residual_block(ctx, &format!("feat.quarter{}", i + 1), x, cfg.feature_width, 1)?;
    }
    Ok(Features { half, quarter: x })
}

/// `(left half, left quarter, right quarter)` feature maps.
pub fn feature_extract<T: Real>(
    ctx: &mut Ctx<'_, T>,
    cfg: &ModelConfig,
    left: Var,
    right: Var,
) -> Result<(Var, Var, Var)> {
    if ctx.graph.shape(left) != ctx.graph.shape(right) {
        return Err(Error::shape(
            "feature_extract",
            format!("left {:?} vs right {:?}", ctx.graph.shape(left), ctx.graph.shape(right)),
        ));
    }
    let l = extract_view(ctx, cfg, left)?;
    let r = extract_view(ctx, cfg, right)?;
    Ok((l.half, l.quarter, r.quarter))
}
