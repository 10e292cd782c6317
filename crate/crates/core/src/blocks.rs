//! Composite building blocks: receptive-field arithmetic, dense blocks,
//! spatial pyramid pooling, the correlation cost volume, horizontal warping
//! and the local/global context fusion (LGCF) module.

use crate::autodiff::{ConvSpec, Graph, Var};
use crate::error::{Error, Result};
use crate::params::Ctx;
use crate::tensor::Real;

pub use crate::autodiff::receptive_field as kernel_receptive_field;

/// Receptive field of one convolution.
pub fn receptive_field(spec: &ConvSpec) -> usize {
    spec.receptive_field()
}

/// Receptive field of a stride-1 stack: sum of per-layer fields minus one
/// per junction.
pub fn stacked_receptive_field(specs: &[ConvSpec]) -> usize {
    if specs.is_empty() {
        return 1;
    }
    specs.iter().map(ConvSpec::receptive_field).sum::<usize>() - (specs.len() - 1)
}

/// Stacked receptive field of `kernel`-sized convs with the given dilations.
pub fn schedule_receptive_field(kernel: usize, dilations: &[usize]) -> usize {
    let specs: Vec<ConvSpec> = dilations.iter().map(|&d| ConvSpec::same(1, 1, kernel, d)).collect();
    stacked_receptive_field(&specs)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseBlockSpec {
    pub in_channels: usize,
    pub growth: usize,
    /// One entry per layer; all ones for a plain dense block.
    pub dilations: Vec<usize>,
    pub kernel: usize,
}

impl DenseBlockSpec {
    pub fn new(in_channels: usize, growth: usize, dilations: Vec<usize>) -> Self {
        DenseBlockSpec { in_channels, growth, dilations, kernel: 3 }
    }

    pub fn plain(in_channels: usize, growth: usize, layers: usize) -> Self {
        Self::new(in_channels, growth, vec![1; layers])
    }

    pub fn layers(&self) -> usize {
        self.dilations.len()
    }

    /// Channels entering layer `i` (1-indexed): `g0 + (i - 1) g`.
    pub fn layer_input_channels(&self, i: usize) -> usize {
        self.in_channels + (i - 1) * self.growth
    }

    /// Input concatenated with every layer output: `g0 + l g`.
    pub fn output_channels(&self) -> usize {
        self.in_channels + self.layers() * self.growth
    }

    pub fn layer_specs(&self) -> Vec<ConvSpec> {
        self.dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| ConvSpec::same(self.layer_input_channels(i + 1), self.growth, self.kernel, d))
            .collect()
    }

    pub fn receptive_field(&self) -> usize {
        stacked_receptive_field(&self.layer_specs())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilations.is_empty() {
            return Err(Error::config("dense block needs at least one layer"));
        }
        if self.growth == 0 || self.in_channels == 0 {
            return Err(Error::config("dense block channel counts must be positive"));
        }
        self.layer_specs().iter().try_for_each(ConvSpec::validate)
    }
}

/// Dense block: layer `i` applies ELU then a dilated 3x3 conv to the
/// concatenation of the block input and every earlier layer output. Returns
/// the concatenation of the input and all layer outputs.
pub fn dense_block<T: Real>(ctx: &mut Ctx<'_, T>, name: &str, x: Var, spec: &DenseBlockSpec) -> Result<Var> {
    spec.validate()?;
    let c = ctx.channels(x);
    if c != spec.in_channels {
        return Err(Error::config(format!(
            "{name}: dense block expects {} input channels, got {c}",
            spec.in_channels
        )));
    }
    let mut features = vec![x];
    for (i, conv) in spec.layer_specs().iter().enumerate() {
        let input = if features.len() == 1 { x } else { ctx.graph.concat_channels(&features)? };
        let h = ctx.elu(input)?;
        let y = ctx.conv(&format!("{name}.layer{}.conv", i + 1), h, conv)?;
        features.push(y);
    }
    ctx.graph.concat_channels(&features)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrelationSpec {
    /// Number of disparity levels `0..max_disparity` at the operating scale.
    pub max_disparity: usize,
}

/// Cost volume `[N, D, H, W]` where channel `d` compares left pixel `x` with
/// right pixel `x - d`.
pub fn correlation<T: Real>(g: &mut Graph<T>, left: Var, right: Var, spec: CorrelationSpec) -> Result<Var> {
    g.correlation(left, right, spec.max_disparity)
}

/// Left-view warp: output at `x` samples `source` at `x - disparity(x)`.
pub fn warp_horizontal<T: Real>(g: &mut Graph<T>, source: Var, disparity: Var) -> Result<Var> {
    g.warp_horizontal(source, disparity)
}

/// `left - warp(right, disparity)`.
pub fn feature_reconstruction_error<T: Real>(
    g: &mut Graph<T>,
    left: Var,
    right: Var,
    disparity: Var,
) -> Result<Var> {
    let warped = g.warp_horizontal(right, disparity)?;
    g.sub(left, warped)
}

/// Spatial pyramid pooling. For each kernel `s`: zero-pad bottom/right to a
/// multiple of `s`, max-pool with window and stride `s`, bilinearly upsample
/// by `s` and crop back to the input size. Branches are concatenated on
/// channels.
pub fn spp<T: Real>(g: &mut Graph<T>, x: Var, pool_kernels: &[usize]) -> Result<Var> {
    if pool_kernels.is_empty() {
        return Err(Error::config("SPP needs at least one pooling kernel"));
    }
    let [_, _, h, w] = g.value(x).dims4("spp")?;
    let mut branches = Vec::with_capacity(pool_kernels.len());
    for &s in pool_kernels {
        if s == 0 {
            return Err(Error::config("SPP kernel must be positive"));
        }
        let (ph, pw) = (h.div_ceil(s) * s, w.div_ceil(s) * s);
        let padded = if (ph, pw) == (h, w) { x } else { g.pad(x, 0, ph - h, 0, pw - w)? };
        let pooled = g.maxpool2d(padded, s, s)?;
        let up = g.upsample_bilinear(pooled, s)?;
        let restored = if (ph, pw) == (h, w) { up } else { g.crop(up, 0, 0, h, w)? };
        branches.push(restored);
    }
    g.concat_channels(&branches)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LgcfSpec {
    pub dense: DenseBlockSpec,
    pub pool_kernels: Vec<usize>,
    pub fusion_channels: usize,
}

impl LgcfSpec {
    /// Six dilated layers `[1, 3, 6, 12, 18, 24]` and pools `[8, 16, 32, 64]`.
    pub fn standard(channels: usize, growth: usize) -> Self {
        LgcfSpec {
            dense: DenseBlockSpec::new(channels, growth, vec![1, 3, 6, 12, 18, 24]),
            pool_kernels: vec![8, 16, 32, 64],
            fusion_channels: channels,
        }
    }

    /// Channels entering the 1x1 fusion conv.
    pub fn fusion_input_channels(&self) -> usize {
        let c = self.dense.in_channels;
        c + self.dense.output_channels() + c * self.pool_kernels.len()
    }
}

/// Context-fused features for one view: `concat(x, dense(x), spp(x))`
/// followed by a 1x1 conv.
pub fn lgcf_features<T: Real>(ctx: &mut Ctx<'_, T>, name: &str, x: Var, spec: &LgcfSpec) -> Result<Var> {
    let dense = dense_block(ctx, &format!("{name}.dense"), x, &spec.dense)?;
    let pooled = spp(ctx.graph, x, &spec.pool_kernels)?;
    let cat = ctx.graph.concat_channels(&[x, dense, pooled])?;
    let fuse = ConvSpec::pointwise(spec.fusion_input_channels(), spec.fusion_channels);
    ctx.conv(&format!("{name}.fuse"), cat, &fuse)
}

/// Siamese context fusion on both views (shared parameters), then the
/// correlation cost volume.
pub fn lgcf<T: Real>(
    ctx: &mut Ctx<'_, T>,
    name: &str,
    left: Var,
    right: Var,
    spec: &LgcfSpec,
    corr: CorrelationSpec,
) -> Result<Var> {
    let l = lgcf_features(ctx, name, left, spec)?;
    let r = lgcf_features(ctx, name, right, spec)?;
    correlation(ctx.graph, l, r, corr)
}
