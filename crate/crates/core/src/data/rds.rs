//! Random-dot stereograms with exact ground truth.
//!
//! Integer layouts (constant, layered) place textured fronto-parallel layers
//! at integer disparities. Each layer owns a texture in left-image
//! coordinates; a layer with disparity `d` shows its texel `x + d` at right
//! pixel `x`. The nearest (largest-disparity) layer wins in each view, so
//! `right[x - gt[x]] == left[x]` holds exactly wherever the left pixel's
//! correspondence is in bounds and owned by the same layer. Everything else
//! is masked invalid.
//!
//! The ramp layout has non-integer disparity. There the right view is the
//! texture itself and the left view is its linear resample at `x - gt[x]`,
//! using the same interpolation as the warp operator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::StereoSample;
use crate::autodiff::sample_row;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Layout {
    /// One plane at a fixed integer disparity.
    Constant { disparity: usize },
    /// A background plane plus `layers` rectangles in front of it.
    Layered { layers: usize },
    /// Disparity varying linearly along x over `[0, max_disparity)`.
    Ramp,
}

impl Layout {
    pub fn name(&self) -> String {
        match self {
            Layout::Constant { disparity } => format!("constant:{disparity}"),
            Layout::Layered { layers } => format!("layered:{layers}"),
            Layout::Ramp => "ramp".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b)));
        let num = |default: usize| -> Result<usize> {
            arg.map_or(Ok(default), |a| a.trim().parse().map_err(|_| Error::config(format!("bad layout argument in {s:?}"))))
        };
        match kind.trim() {
            "constant" => Ok(Layout::Constant { disparity: num(4)? }),
            "layered" => Ok(Layout::Layered { layers: num(3)? }),
            "ramp" => Ok(Layout::Ramp),
            _ => Err(Error::config(format!("unknown disparity layout {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RdsConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Fraction of texels that carry a random dot; the rest are mid-grey.
    pub density: f64,
    pub layout: Layout,
    /// Exclusive upper bound of ground-truth disparity, in pixels.
    pub max_disparity: usize,
    /// Mask pixels hidden by a nearer layer in the right view. When off,
    /// occluded pixels keep their (true) disparity and stay valid.
    pub occlusion: bool,
    pub seed: u64,
}

impl Default for RdsConfig {
    fn default() -> Self {
        RdsConfig {
            height: 64,
            width: 128,
            channels: 1,
            density: 1.0,
            layout: Layout::Layered { layers: 3 },
            max_disparity: 24,
            occlusion: true,
            seed: 0,
        }
    }
}

impl RdsConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        RdsConfig { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::config("rds: image dimensions must be positive"));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::config(format!("rds: density {} outside (0, 1]", self.density)));
        }
        if self.max_disparity == 0 || 4 * self.max_disparity >= self.width {
            return Err(Error::config(format!(
                "rds: max_disparity {} must be in [1, width/4) for width {}",
                self.max_disparity, self.width
            )));
        }
        if let Layout::Constant { disparity } = self.layout {
            if disparity >= self.max_disparity {
                return Err(Error::config(format!(
                    "rds: constant disparity {disparity} must be below max_disparity {}",
                    self.max_disparity
                )));
            }
        }
        Ok(())
    }
}

/// Texture of `c` channels over `h x w` texels.
struct Texture {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, density: f64) -> Self {
        let mut data = vec![0.5; c * h * w];
        for y in 0..h {
            for x in 0..w {
                if rng.random::<f64>() < density {
                    for ch in 0..c {
                        data[(ch * h + y) * w + x] = rng.random::<f64>();
                    }
                }
            }
        }
        Texture { h, w, data }
    }

    fn at(&self, ch: usize, y: usize, x: usize) -> f64 {
        self.data[(ch * self.h + y) * self.w + x]
    }
}

/// Axis-aligned plane in left-image coordinates.
struct Plane {
    disparity: usize,
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
    texture: Texture,
}

impl Plane {
    fn covers(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }
}

pub fn generate_rds<T: Real>(cfg: &RdsConfig) -> Result<StereoSample<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5244_5300_0000_0000);
    match cfg.layout {
        Layout::Ramp => Ok(ramp(cfg, &mut rng)),
        Layout::Constant { disparity } => Ok(planes(cfg, vec![background(cfg, &mut rng, disparity)])),
        Layout::Layered { layers } => {
            let back_d = rng.random_range(0..cfg.max_disparity.div_ceil(3));
            let mut ps = vec![background(cfg, &mut rng, back_d)];
            let (h, w) = (cfg.height, cfg.width);
            for _ in 0..layers {
                let disparity = rng.random_range(back_d..cfg.max_disparity);
                let ph = rng.random_range(h / 4..=h * 3 / 4).max(1);
                let pw = rng.random_range(w / 6..=w / 2).max(1);
                let y0 = rng.random_range(0..=h - ph);
                let x0 = rng.random_range(0..=w - pw);
                // Texels x0..x1 plus the disparity margin seen by the right view.
                let texture = Texture::random(&mut rng, cfg.channels, h, w + cfg.max_disparity, cfg.density);
                ps.push(Plane { disparity, y0, y1: y0 + ph, x0, x1: x0 + pw, texture });
            }
            // Painter's order: far to near, stable for equal disparities.
            ps.sort_by_key(|p| p.disparity);
            Ok(planes(cfg, ps))
        }
    }
}

fn background(cfg: &RdsConfig, rng: &mut ChaCha8Rng, disparity: usize) -> Plane {
    let texture = Texture::random(rng, cfg.channels, cfg.height, cfg.width + cfg.max_disparity, cfg.density);
    Plane { disparity, y0: 0, y1: cfg.height, x0: 0, x1: cfg.width + cfg.max_disparity, texture }
}

fn owner(ps: &[Plane], y: usize, x: usize) -> Option<usize> {
    ps.iter().rposition(|p| p.covers(y, x))
}

fn planes<T: Real>(cfg: &RdsConfig, ps: Vec<Plane>) -> StereoSample<T> {
    let (c, h, w) = (cfg.channels, cfg.height, cfg.width);
    let mut left = vec![T::zero(); c * h * w];
    let mut right = vec![T::zero(); c * h * w];
    let mut gt = vec![T::zero(); h * w];
    let mut valid = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let k = owner(&ps, y, x).expect("background covers everything");
            let p = &ps[k];
            for ch in 0..c {
                left[(ch * h + y) * w + x] = T::lit(p.texture.at(ch, y, x));
            }
            gt[y * w + x] = T::lit(p.disparity as f64);

            // Right pixel x shows the nearest plane whose texel x + d exists.
            let rk = ps
                .iter()
                .rposition(|q| q.covers(y, x + q.disparity))
                .expect("background covers everything");
            let q = &ps[rk];
            for ch in 0..c {
                right[(ch * h + y) * w + x] = T::lit(q.texture.at(ch, y, x + q.disparity));
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            let k = owner(&ps, y, x).expect("background covers everything");
            let d = ps[k].disparity;
            if x < d {
                continue;
            }
            let xr = x - d;
            let rk = ps.iter().rposition(|q| q.covers(y, xr + q.disparity)).expect("background");
            valid[y * w + x] = rk == k || !cfg.occlusion;
        }
    }
    StereoSample {
        left: Tensor::from_parts(vec![c, h, w], left),
        right: Tensor::from_parts(vec![c, h, w], right),
        gt: Tensor::from_parts(vec![1, h, w], gt),
        valid,
    }
}

fn ramp<T: Real>(cfg: &RdsConfig, rng: &mut ChaCha8Rng) -> StereoSample<T> {
    let (c, h, w) = (cfg.channels, cfg.height, cfg.width);
    let texture = Texture::random(rng, c, h, w, cfg.density);
    let lo = rng.random_range(0.0..cfg.max_disparity as f64 / 2.0);
    let hi = rng.random_range(lo..cfg.max_disparity as f64 - 1e-3);
    let right: Vec<T> = texture.data.iter().map(|&v| T::lit(v)).collect();
    let mut left = vec![T::zero(); c * h * w];
    let mut gt = vec![T::zero(); h * w];
    let mut valid = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let d = T::lit(lo + (hi - lo) * x as f64 / (w - 1).max(1) as f64);
            gt[y * w + x] = d;
            let pos = T::lit(x as f64) - d;
            let (_, x0, frac) = sample_row(&right[y * w..(y + 1) * w], pos);
            let last = if frac == T::zero() { x0 } else { x0 + 1 };
            valid[y * w + x] = x0 >= 0 && (last as usize) < w;
            for ch in 0..c {
                let row = &right[(ch * h + y) * w..(ch * h + y + 1) * w];
                left[(ch * h + y) * w + x] = sample_row(row, pos).0;
            }
        }
    }
    StereoSample {
        left: Tensor::from_parts(vec![c, h, w], left),
        right: Tensor::from_parts(vec![c, h, w], right),
        gt: Tensor::from_parts(vec![1, h, w], gt),
        valid,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_shift_is_exact() {
        let cfg = RdsConfig { layout: Layout::Constant { disparity: 4 }, ..RdsConfig::default() };
        let s: StereoSample<f64> = generate_rds(&cfg).unwrap();
        let [_, h, w] = [1, 64, 128];
        for y in 0..h {
            for x in 4..w {
                assert!(s.valid[y * w + x]);
                assert_eq!(s.right.data()[y * w + x - 4], s.left.data()[y * w + x]);
            }
            assert!(!s.valid[y * w]);
        }
    }

    #[test]
    fn zero_disparity_gives_identical_views() {
        let cfg = RdsConfig { layout: Layout::Constant { disparity: 0 }, ..RdsConfig::default() };
        let s: StereoSample<f32> = generate_rds(&cfg).unwrap();
        assert_eq!(s.left, s.right);
        assert!(s.valid.iter().all(|&v| v));
    }

    #[test]
    fn rejects_large_disparity_range() {
        let cfg = RdsConfig { max_disparity: 32, ..RdsConfig::default() };
        assert!(generate_rds::<f32>(&cfg).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = RdsConfig { seed: 9, ..RdsConfig::default() };
        let a: StereoSample<f32> = generate_rds(&cfg).unwrap();
        let b: StereoSample<f32> = generate_rds(&cfg).unwrap();
        assert_eq!(a, b);
        let c: StereoSample<f32> = generate_rds(&cfg.with_seed(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn layouts_parse() {
        assert_eq!(Layout::parse("constant:7").unwrap(), Layout::Constant { disparity: 7 });
        assert_eq!(Layout::parse("layered").unwrap(), Layout::Layered { layers: 3 });
        assert_eq!(Layout::parse(&Layout::Ramp.name()).unwrap(), Layout::Ramp);
        assert!(Layout::parse("spiral").is_err());
    }
}
