//! Encoder-decoder disparity estimation over the cost volume.

use crate::autodiff::{ConvSpec, Var};
use crate::blocks::{correlation, dense_block, lgcf, CorrelationSpec, DenseBlockSpec};
use crate::error::{Error, Result};
use crate::params::Ctx;
use crate::tensor::Real;

use super::config::ModelConfig;

/// Cost volume (`D_max` channels) and the estimation input
/// `concat(cost, left_quarter)`.
pub fn build_cost_volume<T: Real>(
    ctx: &mut Ctx<'_, T>,
    cfg: &ModelConfig,
    left_q: Var,
    right_q: Var,
) -> Result<(Var, Var)> {
    let corr = CorrelationSpec { max_disparity: cfg.max_disparity };
    let cost = if cfg.use_lgcf {
        lgcf(ctx, "feat.lgcf", left_q, right_q, &cfg.lgcf_spec(), corr)?
    } else {
        correlation(ctx.graph, left_q, right_q, corr)?
    };
    let input = ctx.graph.concat_channels(&[cost, left_q])?;
    Ok((cost, input))
}

/// Feature maps the decoder takes from outside the estimation network.
pub struct DecoderSkips {
    /// Left features at half resolution (fourth decoder block).
    pub left_half: Var,
    /// Left image at full resolution (fifth decoder block).
    pub left_image: Var,
}

/// Encoder stride per block: the first keeps the quarter-scale input size,
/// the other two halve it, bottoming out at 1/16.
pub const ENCODER_STRIDES: [usize; 3] = [1, 2, 2];

/// Returns the five disparity maps, coarse to fine, each in full-resolution
/// pixel units.
pub fn estimate_disparity<T: Real>(
    ctx: &mut Ctx<'_, T>,
    cfg: &ModelConfig,
    input: Var,
    skips: &DecoderSkips,
) -> Result<Vec<Var>> {
    let mut x = input;
    let mut encoded = Vec::with_capacity(3);
    for (stage, &stride) in ENCODER_STRIDES.iter().enumerate() {
        let name = format!("estim.enc{}", stage + 1);
        let cin = ctx.channels(x);
        let width = cfg.encoder_widths[stage];
        x = ctx.conv(&format!("{name}.entry"), x, &ConvSpec::strided(cin, width, 3, stride))?;
        x = dense_block(ctx, &format!("{name}.dense"), x, &cfg.encoder_block(stage))?;
        encoded.push(x);
    }
    let bottleneck = DenseBlockSpec::plain(ctx.channels(x), cfg.growth, cfg.bottleneck_layers);
    x = dense_block(ctx, "estim.bottleneck", x, &bottleneck)?;

    // Decoder block s sees the previous block's features and disparity
    // (both upsampled) plus its skip; its head predicts a disparity residual.
    let skip_for = |s: usize| match s {
        0 => None, // the bottleneck output already carries the third encoder block
        1 => Some(encoded[1]),
        2 => Some(encoded[0]),
        3 => Some(skips.left_half),
        _ => Some(skips.left_image),
    };
    let scale = T::lit(cfg.disparity_scale);
    let mut maps: Vec<Var> = Vec::with_capacity(5);
    let mut feat = x;
    for (s, &width) in cfg.decoder_widths.iter().enumerate() {
        let name = format!("estim.dec{}", s + 1);
        let mut parts = Vec::with_capacity(3);
        let mut prior = None;
        if s == 0 {
            parts.push(feat);
        } else {
            parts.push(ctx.graph.upsample_bilinear(feat, 2)?);
            let up = ctx.graph.upsample_bilinear(maps[s - 1], 2)?;
            parts.push(up);
            prior = Some(up);
        }
        if let Some(skip) = skip_for(s) {
            let (want, got) = (ctx.spatial(parts[0]), ctx.spatial(skip));
            if want != got {
                return Err(Error::config(format!("{name}: skip is {got:?}, decoder is at {want:?}")));
            }
            parts.push(skip);
        }
        let cat = ctx.graph.concat_channels(&parts)?;
        let h = ctx.conv(&format!("{name}.conv"), cat, &ConvSpec::same(ctx.channels(cat), width, 3, 1))?;
        feat = ctx.elu(h)?;
        let delta = ctx.conv_zero(&format!("{name}.head"), feat, &ConvSpec::pointwise(width, 1))?;
        let delta = ctx.graph.scale(delta, scale)?;
        let disp = match prior {
            Some(p) => ctx.graph.add(p, delta)?,
            None => delta,
        };
        maps.push(disp);
    }
    Ok(maps)
}
