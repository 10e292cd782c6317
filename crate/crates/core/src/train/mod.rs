//! Losses, optimizer, metrics, the training step and evaluation.

pub mod loss;
pub mod metrics;
pub mod optim;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::autodiff::Graph;
use crate::data::{Batch, StereoSample};
use crate::error::{Error, Result, ResultExt};
use crate::kv::KvMap;
use crate::model::{forward, Model};
use crate::params::Ctx;
use crate::tensor::{Real, Tensor};

pub use loss::{downsample_gt, multiscale_loss, LossReport, LossWeights};
pub use metrics::{disparity_to_depth, epe, three_pixel_error, CameraParams, INVALID_DEPTH};
pub use optim::{Adam, AdamConfig, StepSchedule};

/// Everything about the optimization that is not the model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    /// Multiplier applied at each boundary.
    pub decay_factor: f64,
    /// Iterations where the rate is multiplied by `decay_factor`; `None`
    /// means one and two thirds of `iterations`.
    pub decay_boundaries: Option<Vec<u64>>,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            batch_size: 2,
            lr: 2e-4,
            adam: AdamConfig::default(),
            decay_factor: 0.5,
            decay_boundaries: None,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> StepSchedule {
        match &self.decay_boundaries {
            Some(b) => StepSchedule { base: self.lr, factor: self.decay_factor, boundaries: b.clone() },
            None => StepSchedule { factor: self.decay_factor, ..StepSchedule::thirds(self.lr, self.iterations) },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("optim.batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("optim.lr must be positive"));
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::config("optim betas must lie in [0, 1) and eps must be positive"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config("optim.decay_factor must lie in (0, 1]"));
        }
        self.weights.validate()
    }
}

/// Result of one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// 0-based index of the step just taken.
    pub iteration: u64,
    pub lr: f64,
    pub loss: LossReport,
    pub elapsed: Duration,
}

impl StepReport {
    /// One `key=value` log line.
    pub fn log_line(&self) -> String {
        let mut s = format!("iter={} lr={:e} loss={:.6}", self.iteration + 1, self.lr, self.loss.total);
        for (l, f) in self.loss.scales.iter().zip(crate::model::DECODER_SCALES) {
            let _ = write!(s, " loss_1/{f}={l:.6}");
        }
        if let Some(r) = self.loss.refined {
            let _ = write!(s, " loss_refined={r:.6}");
        }
        let _ = write!(s, " time_ms={:.1}", self.elapsed.as_secs_f64() * 1e3);
        s
    }
}

/// Model, optimizer state and iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<T> {
    pub model: Model<T>,
    pub optim: Adam<T>,
    pub config: TrainConfig,
    /// Steps completed so far.
    pub iteration: u64,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer { model, optim: Adam::new(config.adam), config, iteration: 0 })
    }

    /// Loss report and per-parameter gradients for `batch` at the current
    /// parameters.
    pub fn gradients(&self, batch: &Batch<T>) -> Result<(LossReport, BTreeMap<String, Tensor<T>>)> {
        let mut graph = Graph::new();
        let left = graph.constant(batch.left.clone());
        let right = graph.constant(batch.right.clone());
        let alpha = T::lit(self.model.config.elu_alpha);
        let mut ctx = Ctx::bind(&mut graph, &self.model.params, true).with_alpha(alpha);
        let out = forward(&mut ctx, &self.model.config, left, right)?;
        let bound = ctx.into_bound();
        let (loss, report) = multiscale_loss(&mut graph, &out, &batch.gt, &batch.valid, &self.config.weights)?;
        let mut grads = graph.backward(loss)?;
        let named = bound
            .into_iter()
            .map(|(name, v)| {
                let g = grads.take(v).unwrap_or_else(|| Tensor::zeros(graph.shape(v).to_vec()));
                (name, g)
            })
            .collect();
        Ok((report, named))
    }

    /// One Adam step on `batch`.
    pub fn step(&mut self, batch: &Batch<T>) -> Result<StepReport> {
        let t0 = Instant::now();
        let it = self.iteration;
        let lr = self.config.schedule().lr_at(it);
        let (loss, grads) = self.gradients(batch).map_err(|e| self.diagnose(e))?;
        self.optim.update(&mut self.model.params, &grads, lr).map_err(|e| self.diagnose(e))?;
        self.iteration += 1;
        Ok(StepReport { iteration: it, lr, loss, elapsed: t0.elapsed() })
    }

    fn diagnose(&self, e: Error) -> Error {
        let (name, peak) = self
            .model
            .params
            .iter()
            .map(|(n, t)| (n.as_str(), t.data().iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()))))
            .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
        e.context(format!("iteration {} (largest |parameter| {peak:.3e} in {name})", self.iteration + 1))
    }
}

/// Metrics for one evaluated sample.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ImageMetrics {
    pub epe: f64,
    pub three_pe: f64,
    pub valid_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    /// Mean absolute error in pixels over all valid pixels of all images.
    pub epe: f64,
    /// Percent of valid pixels off by more than 3 px.
    pub three_pe: f64,
    pub valid_pixels: usize,
    pub images: usize,
    /// Mean per-scale losses, coarse to fine, when computed.
    pub scale_losses: Option<Vec<f64>>,
    pub per_image: Vec<ImageMetrics>,
    /// Wall-clock seconds; kept apart so the rest of the report is
    /// reproducible byte for byte.
    pub seconds: f64,
}

impl EvalReport {
    /// Pool per-image predictions. `items` holds `(prediction, gt, mask)`.
    pub fn from_predictions<T: Real>(items: &[(Tensor<T>, &Tensor<T>, &[bool])]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Degenerate("evaluation over zero images".into()));
        }
        let mut per_image = Vec::with_capacity(items.len());
        let (mut abs_sum, mut bad, mut total) = (0.0, 0usize, 0usize);
        for (pred, gt, valid) in items {
            let n = valid.iter().filter(|&&v| v).count();
            let e = epe(pred.data(), gt.data(), valid)?;
            let t = three_pixel_error(pred.data(), gt.data(), valid)?;
            abs_sum += e * n as f64;
            bad += pred
                .data()
                .iter()
                .zip(gt.data())
                .zip(valid.iter())
                .filter(|((&p, &g), &v)| v && (p.as_f64() - g.as_f64()).abs() > 3.0)
                .count();
            total += n;
            per_image.push(ImageMetrics { epe: e, three_pe: t, valid_pixels: n });
        }
        Ok(EvalReport {
            epe: abs_sum / total as f64,
            three_pe: 100.0 * bad as f64 / total as f64,
            valid_pixels: total,
            images: items.len(),
            scale_losses: None,
            per_image,
            seconds: 0.0,
        })
    }

    /// Line-oriented `key = value` text. Timing is the last line.
    pub fn to_kv_text(&self) -> String {
        let mut kv = KvMap::new();
        kv.set("epe", format!("{:.6}", self.epe));
        kv.set("three_pe", format!("{:.4}", self.three_pe));
        kv.set("valid_pixels", self.valid_pixels);
        kv.set("images", self.images);
        if let Some(s) = &self.scale_losses {
            let v: Vec<String> = s.iter().map(|l| format!("{l:.6}")).collect();
            kv.set_list("scale_losses", &v);
        }
        for (i, m) in self.per_image.iter().enumerate() {
            kv.set(format!("image.{i:05}.epe"), format!("{:.6}", m.epe));
            kv.set(format!("image.{i:05}.three_pe"), format!("{:.4}", m.three_pe));
        }
        format!("{}seconds = {:.3}\n", kv.to_text(), self.seconds)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Usage(format!("report serialization: {e}")))
    }
}

/// Negative disparities clamped to zero, as used for evaluation and export.
pub fn clamp_disparity<T: Real>(d: &Tensor<T>) -> Tensor<T> {
    d.map(|v| v.max(T::zero()))
}

/// Evaluate the model's final disparity on `samples`, one image at a time.
pub fn evaluate<T: Real>(model: &Model<T>, samples: &[StereoSample<T>], weights: Option<&LossWeights>) -> Result<EvalReport> {
    let t0 = Instant::now();
    let mut preds = Vec::with_capacity(samples.len());
    let mut losses = vec![0.0; crate::model::DECODER_SCALES.len()];
    for (i, s) in samples.iter().enumerate() {
        let batch = Batch::from_samples(std::slice::from_ref(s))?;
        let p = model.predict(&batch.left, &batch.right).context(format!("sample {i}"))?;
        if weights.is_some() {
            for (acc, (d, &f)) in losses.iter_mut().zip(p.disparities.iter().zip(&crate::model::DECODER_SCALES)) {
                let (target, mask) = downsample_gt(&batch.gt, &batch.valid, f)?;
                *acc += huber_value(d, &target, &mask)? / samples.len() as f64;
            }
        }
        let d = clamp_disparity(p.final_disparity());
        preds.push(d.reshape(s.gt.shape().to_vec())?);
    }
    let items: Vec<_> = preds.into_iter().zip(samples).map(|(p, s)| (p, &s.gt, s.valid.as_slice())).collect();
    let mut report = EvalReport::from_predictions(&items)?;
    report.scale_losses = weights.map(|_| losses);
    report.seconds = t0.elapsed().as_secs_f64();
    Ok(report)
}

/// Huber loss value without building a graph.
pub fn huber_value<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, mask: &[bool]) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    let l = g.huber_loss(p, target, mask)?;
    Ok(g.value(l).item().as_f64())
}
