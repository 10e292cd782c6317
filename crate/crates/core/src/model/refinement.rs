//! Full-resolution residual refinement driven by the feature reconstruction
//! error.

use crate::autodiff::{ConvSpec, DeconvSpec, Var};
use crate::blocks::feature_reconstruction_error;
use crate::error::{Error, Result};
use crate::params::Ctx;
use crate::tensor::Real;

use super::config::{ModelConfig, COST_SCALE};

/// Input of the refinement network: `concat(disp, left - warp(right, disp), left)`
/// where both feature maps are the quarter-scale features upsampled to the
/// disparity's resolution.
pub fn refinement_input<T: Real>(ctx: &mut Ctx<'_, T>, disparity: Var, left_q: Var, right_q: Var) -> Result<Var> {
    let lu = ctx.graph.upsample_bilinear(left_q, COST_SCALE)?;
    let ru = ctx.graph.upsample_bilinear(right_q, COST_SCALE)?;
    if ctx.spatial(lu) != ctx.spatial(disparity) {
        return Err(Error::config(format!(
            "refinement: features upsample to {:?}, disparity is {:?}",
            ctx.spatial(lu),
            ctx.spatial(disparity)
        )));
    }
    let err = feature_reconstruction_error(ctx.graph, lu, ru, disparity)?;
    ctx.graph.concat_channels(&[disparity, err, lu])
}

/// Three stride-2 convs, three stride-2 deconvs with encoder skips; the last
/// deconv emits the residual added to `disparity`. Its weights start at
/// zero, so an untrained refinement stage passes the disparity through.
pub fn refine_disparity<T: Real>(
    ctx: &mut Ctx<'_, T>,
    cfg: &ModelConfig,
    disparity: Var,
    left_q: Var,
    right_q: Var,
) -> Result<Var> {
    let input = refinement_input(ctx, disparity, left_q, right_q)?;
    let mut x = input;
    let mut encoded = Vec::with_capacity(3);
    for (i, &width) in cfg.refine_widths.iter().enumerate() {
        let cin = ctx.channels(x);
        let h = ctx.conv(&format!("refine.enc{}", i + 1), x, &ConvSpec::strided(cin, width, 3, 2))?;
        x = ctx.elu(h)?;
        encoded.push(x);
    }
    // dec1: 1/8 -> 1/4, dec2: 1/4 -> 1/2, dec3: 1/2 -> 1
    let w = &cfg.refine_widths;
    let h = ctx.deconv("refine.dec1", x, &DeconvSpec::upsample2(w[2], w[1]))?;
    let h = ctx.elu(h)?;
    let h = ctx.graph.concat_channels(&[h, encoded[1]])?;
    let h = ctx.deconv("refine.dec2", h, &DeconvSpec::upsample2(2 * w[1], w[0]))?;
    let h = ctx.elu(h)?;
    let h = ctx.graph.concat_channels(&[h, encoded[0]])?;
    let residual = ctx.deconv_zero("refine.dec3", h, &DeconvSpec::upsample2(2 * w[0], 1))?;
    ctx.graph.add(disparity, residual)
}
