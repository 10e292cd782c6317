//! Multi-scale Huber supervision.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::{ModelOutput, DECODER_SCALES};
use crate::tensor::{Real, Tensor};

/// Per-output loss weights.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    /// One weight per decoder scale, coarse to fine.
    pub scales: Vec<f64>,
    /// Weight of the refined full-resolution map.
    pub refined: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { scales: vec![1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0], refined: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.scales.len() != DECODER_SCALES.len() {
            return Err(Error::config(format!(
                "expected {} per-scale loss weights, got {}",
                DECODER_SCALES.len(),
                self.scales.len()
            )));
        }
        if self.scales.iter().chain([&self.refined]).any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    /// Huber loss per decoder scale, coarse to fine.
    pub scales: Vec<f64>,
    pub refined: Option<f64>,
    /// `sum(weight * loss)`.
    pub total: f64,
    /// Valid pixels per decoder scale.
    pub pixels: Vec<usize>,
}

/// Valid-aware average pooling of `[N, 1, H, W]` ground truth by `factor`.
/// Values stay in full-resolution pixels; a coarse pixel is valid when any
/// pixel under it is.
pub fn downsample_gt<T: Real>(gt: &Tensor<T>, valid: &[bool], factor: usize) -> Result<(Tensor<T>, Vec<bool>)> {
    let [n, c, h, w] = gt.dims4("downsample_gt")?;
    if c != 1 || valid.len() != gt.numel() {
        return Err(Error::shape("downsample_gt", format!("gt {:?} with mask of {}", gt.shape(), valid.len())));
    }
    if factor == 1 {
        return Ok((gt.clone(), valid.to_vec()));
    }
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::config(format!("{h}x{w} ground truth is not divisible by {factor}")));
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = vec![T::zero(); n * oh * ow];
    let mut mask = vec![false; n * oh * ow];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let (mut sum, mut count) = (T::zero(), 0usize);
                for y in oy * factor..(oy + 1) * factor {
                    for x in ox * factor..(ox + 1) * factor {
                        let i = (b * h + y) * w + x;
                        if valid[i] {
                            sum += gt.data()[i];
                            count += 1;
                        }
                    }
                }
                let o = (b * oh + oy) * ow + ox;
                if count > 0 {
                    out[o] = sum / T::lit(count as f64);
                    mask[o] = true;
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, 1, oh, ow], out)?, mask))
}

/// Weighted sum of per-scale Huber losses as a graph scalar, plus the report.
/// Scales with zero weight are reported but not added to the graph.
pub fn multiscale_loss<T: Real>(
    g: &mut Graph<T>,
    out: &ModelOutput,
    gt: &Tensor<T>,
    valid: &[bool],
    weights: &LossWeights,
) -> Result<(Var, LossReport)> {
    weights.validate()?;
    if out.disparities.len() != weights.scales.len() {
        return Err(Error::config(format!(
            "{} loss weights for {} outputs",
            weights.scales.len(),
            out.disparities.len()
        )));
    }
    let mut terms = Vec::new();
    let mut scales = Vec::new();
    let mut pixels = Vec::new();
    let mut total = 0.0;
    for ((&pred, &factor), &w) in out.disparities.iter().zip(&DECODER_SCALES).zip(&weights.scales) {
        let (target, mask) = downsample_gt(gt, valid, factor)?;
        let l = g.huber_loss(pred, &target, &mask)?;
        let v = g.value(l).item().as_f64();
        scales.push(v);
        pixels.push(mask.iter().filter(|&&m| m).count());
        total += w * v;
        if w != 0.0 {
            terms.push(g.scale(l, T::lit(w))?);
        }
    }
    let refined = match out.refined {
        Some(r) => {
            let l = g.huber_loss(r, gt, valid)?;
            let v = g.value(l).item().as_f64();
            total += weights.refined * v;
            if weights.refined != 0.0 {
                terms.push(g.scale(l, T::lit(weights.refined))?);
            }
            Some(v)
        }
        None => None,
    };
    let mut loss = *terms.first().ok_or_else(|| Error::config("every loss weight is zero"))?;
    for &t in &terms[1..] {
        loss = g.add(loss, t)?;
    }
    Ok((loss, LossReport { scales, refined, total, pixels }))
}
