//! Random crop plus photometric jitter applied identically to both views.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::StereoSample;
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentConfig {
    /// Output `(height, width)`; `None` keeps the full image.
    pub crop: Option<(usize, usize)>,
    /// Intensity multiplier range.
    pub brightness: (f64, f64),
    /// Exponent range applied as `v^gamma`.
    pub gamma: (f64, f64),
    /// Per-channel multiplier range.
    pub color: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { crop: None, brightness: (0.8, 1.2), gamma: (0.8, 1.2), color: (0.9, 1.1) }
    }
}

impl AugmentConfig {
    /// No crop and every range collapsed to 1.
    pub fn identity() -> Self {
        AugmentConfig { crop: None, brightness: (1.0, 1.0), gamma: (1.0, 1.0), color: (1.0, 1.0) }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("brightness", self.brightness), ("gamma", self.gamma), ("color", self.color)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::config(format!("augment.{name} range ({lo}, {hi}) must satisfy 0 < lo <= hi")));
            }
        }
        Ok(())
    }
}

/// Photometric parameters drawn for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Photometric {
    pub brightness: f64,
    pub gamma: f64,
    pub color: Vec<f64>,
}

impl Photometric {
    /// `clamp(color_c * brightness * v^gamma, 0, 1)`.
    pub fn apply<T: Real>(&self, v: T, channel: usize) -> T {
        let x = v.as_f64().max(0.0).powf(self.gamma) * self.brightness * self.color[channel];
        T::lit(x.clamp(0.0, 1.0))
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Crop window and photometric parameters for a sample of `(c, h, w)`.
pub fn draw_params(cfg: &AugmentConfig, (c, h, w): (usize, usize, usize), seed: u64) -> Result<((usize, usize, usize, usize), Photometric)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ch, cw) = cfg.crop.unwrap_or((h, w));
    if ch > h || cw > w || ch == 0 || cw == 0 {
        return Err(Error::config(format!("crop {ch}x{cw} does not fit a {h}x{w} image")));
    }
    let top = rng.random_range(0..=h - ch);
    let left = rng.random_range(0..=w - cw);
    let brightness = draw(&mut rng, cfg.brightness);
    let gamma = draw(&mut rng, cfg.gamma);
    let color = (0..c).map(|_| draw(&mut rng, cfg.color)).collect();
    Ok(((top, left, ch, cw), Photometric { brightness, gamma, color }))
}

pub fn augment<T: Real>(sample: &StereoSample<T>, cfg: &AugmentConfig, seed: u64) -> Result<StereoSample<T>> {
    let (c, h, w) = sample.dims();
    let ((top, left, ch, cw), photo) = draw_params(cfg, (c, h, w), seed)?;
    let mut out = sample.crop(top, left, ch, cw)?;
    for img in [&mut out.left, &mut out.right] {
        let plane = ch * cw;
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = photo.apply(*v, i / plane);
        }
    }
    Ok(out)
}
