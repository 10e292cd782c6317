//! The three-subnetwork disparity model: Siamese feature extraction with an
//! optional context-fusion cost volume, an encoder-decoder estimating
//! disparity at five scales, and an optional full-resolution refinement.

pub mod config;
pub mod estimation;
pub mod features;
pub mod refinement;

use std::time::{Duration, Instant};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result, ResultExt};
use crate::params::{Ctx, ParamStore};
use crate::tensor::{Real, Tensor};

pub use config::{ModelConfig, Variant, COST_SCALE, DECODER_SCALES, INPUT_MULTIPLE};
pub use estimation::{build_cost_volume, estimate_disparity, DecoderSkips};
pub use features::{feature_extract, residual_block};
pub use refinement::refine_disparity;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timing {
    pub features: Duration,
    pub estimation: Duration,
    pub refinement: Duration,
}

impl Timing {
    pub fn total(&self) -> Duration {
        self.features + self.estimation + self.refinement
    }
}

/// Resolutions visited by the estimation network, from the recorded graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Audit {
    pub input: (usize, usize),
    /// Smallest `(H, W)` of any op output inside the estimation network.
    pub estimation_min: (usize, usize),
    pub cost_volume: Vec<usize>,
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// Disparity per decoder scale, coarse (1/16) to fine (1/1).
    pub disparities: Vec<Var>,
    pub refined: Option<Var>,
    pub cost_volume: Var,
    pub audit: Audit,
    pub timing: Timing,
}

impl ModelOutput {
    /// Refined map when present, else the full-resolution estimate.
    pub fn final_disparity(&self) -> Var {
        self.refined.unwrap_or(*self.disparities.last().expect("five decoder outputs"))
    }
}

/// Run the whole model on `[N, C, H, W]` views already in the graph.
pub fn forward<T: Real>(ctx: &mut Ctx<'_, T>, cfg: &ModelConfig, left: Var, right: Var) -> Result<ModelOutput> {
    let t0 = Instant::now();
    let (left_half, left_q, right_q) =
        feature_extract(ctx, cfg, left, right).context("feature extraction")?;
    let (cost_volume, cost_input) =
        build_cost_volume(ctx, cfg, left_q, right_q).context("feature extraction")?;
    let t1 = Instant::now();

    let estimation_start = ctx.graph.len();
    let skips = DecoderSkips { left_half, left_image: left };
    let disparities = estimate_disparity(ctx, cfg, cost_input, &skips).context("disparity estimation")?;
    let estimation_min = ctx
        .graph
        .op_shapes_since(estimation_start)
        .filter(|(_, s)| s.len() == 4)
        .map(|(_, s)| (s[2], s[3]))
        .min_by_key(|&(h, w)| h * w)
        .ok_or_else(|| Error::Usage("estimation network recorded no ops".into()))?;
    let t2 = Instant::now();

    let refined = if cfg.use_refinement {
        let full = *disparities.last().expect("five decoder outputs");
        Some(refine_disparity(ctx, cfg, full, left_q, right_q).context("refinement")?)
    } else {
        None
    };
    let t3 = Instant::now();

    let s = ctx.graph.shape(left);
    let audit = Audit { input: (s[2], s[3]), estimation_min, cost_volume: ctx.graph.shape(cost_volume).to_vec() };
    Ok(ModelOutput {
        disparities,
        refined,
        cost_volume,
        audit,
        timing: Timing { features: t1 - t0, estimation: t2 - t1, refinement: t3 - t2 },
    })
}

/// Concrete values of a forward pass without gradients.
#[derive(Debug, Clone)]
pub struct Prediction<T> {
    pub disparities: Vec<Tensor<T>>,
    pub refined: Option<Tensor<T>>,
    pub cost_volume: Tensor<T>,
    pub audit: Audit,
    pub timing: Timing,
}

impl<T: Real> Prediction<T> {
    pub fn final_disparity(&self) -> &Tensor<T> {
        self.refined.as_ref().unwrap_or_else(|| self.disparities.last().expect("five decoder outputs"))
    }
}

/// A configuration plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Fresh parameters, seeded by `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(Model { config, params })
    }

    /// Fail unless `params` has exactly the layout `config` produces.
    pub fn from_parts(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        init_params::<T>(&config)?.check_layout(&params)?;
        Ok(Model { config, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub fn predict(&self, left: &Tensor<T>, right: &Tensor<T>) -> Result<Prediction<T>> {
        let mut graph = Graph::new();
        let (l, r) = (graph.constant(left.clone()), graph.constant(right.clone()));
        let mut ctx = Ctx::bind(&mut graph, &self.params, false).with_alpha(T::lit(self.config.elu_alpha));
        let out = forward(&mut ctx, &self.config, l, r)?;
        Ok(Prediction {
            disparities: out.disparities.iter().map(|&v| graph.value(v).clone()).collect(),
            refined: out.refined.map(|v| graph.value(v).clone()),
            cost_volume: graph.value(out.cost_volume).clone(),
            audit: out.audit,
            timing: out.timing,
        })
    }
}

/// Initialize every parameter by running the model once on a minimal input.
/// Parameter shapes do not depend on the input size.
pub fn init_params<T: Real>(cfg: &ModelConfig) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut graph = Graph::new();
    let shape = [1, cfg.in_channels, INPUT_MULTIPLE, INPUT_MULTIPLE];
    let l = graph.constant(Tensor::zeros(shape));
    let r = graph.constant(Tensor::zeros(shape));
    let mut ctx = Ctx::init(&mut graph, cfg.seed).with_alpha(T::lit(cfg.elu_alpha));
    forward(&mut ctx, cfg, l, r)?;
    Ok(ctx.into_initialized().expect("init context"))
}
