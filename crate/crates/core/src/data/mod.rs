//! Stereo samples: synthetic generation, file formats, augmentation and
//! batching.

pub mod augment;
mod header;
pub mod pfm;
pub mod pnm;
pub mod rds;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result, ResultExt};
use crate::tensor::{Real, Tensor};

pub use augment::{augment, AugmentConfig};
pub use pfm::{read_pfm, write_pfm};
pub use pnm::{read_image, write_image};
pub use rds::{generate_rds, Layout, RdsConfig};

/// A rectified pair with dense left-view ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoSample<T> {
    /// `[C, H, W]` intensities in `[0, 1]`.
    pub left: Tensor<T>,
    pub right: Tensor<T>,
    /// `[1, H, W]` disparity in pixels.
    pub gt: Tensor<T>,
    /// `H * W` flags marking pixels with usable ground truth.
    pub valid: Vec<bool>,
}

impl<T: Real> StereoSample<T> {
    /// `(channels, height, width)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.left.shape();
        (s[0], s[1], s[2])
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.dims();
        if self.right.shape() != [c, h, w] || self.gt.shape() != [1, h, w] || self.valid.len() != h * w {
            return Err(Error::shape(
                "stereo sample",
                format!(
                    "left {:?}, right {:?}, gt {:?}, mask of {}",
                    self.left.shape(),
                    self.right.shape(),
                    self.gt.shape(),
                    self.valid.len()
                ),
            ));
        }
        Ok(())
    }

    pub fn crop(&self, top: usize, left: usize, ch: usize, cw: usize) -> Result<Self> {
        let (c, h, w) = self.dims();
        if top + ch > h || left + cw > w {
            return Err(Error::config(format!("crop {ch}x{cw}+{top}+{left} outside {h}x{w}")));
        }
        let cut = |t: &Tensor<T>, planes: usize| {
            let mut out = Vec::with_capacity(planes * ch * cw);
            for p in 0..planes {
                for y in top..top + ch {
                    let row = (p * h + y) * w;
                    out.extend_from_slice(&t.data()[row + left..row + left + cw]);
                }
            }
            Tensor::new(vec![planes, ch, cw], out)
        };
        let gt = cut(&self.gt, 1)?;
        // A match left of the window is no longer visible in the right view.
        let mut valid = Vec::with_capacity(ch * cw);
        for y in top..top + ch {
            for x in 0..cw {
                let d = gt.data()[(y - top) * cw + x].as_f64();
                valid.push(self.valid[y * w + left + x] && d <= x as f64);
            }
        }
        Ok(StereoSample { left: cut(&self.left, c)?, right: cut(&self.right, c)?, gt, valid })
    }

    pub fn cast<U: Real>(&self) -> StereoSample<U> {
        StereoSample { left: self.left.cast(), right: self.right.cast(), gt: self.gt.cast(), valid: self.valid.clone() }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Samples stacked along a leading batch axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    /// `[N, C, H, W]`.
    pub left: Tensor<T>,
    pub right: Tensor<T>,
    /// `[N, 1, H, W]`.
    pub gt: Tensor<T>,
    pub valid: Vec<bool>,
}

impl<T: Real> Batch<T> {
    pub fn from_samples(samples: &[StereoSample<T>]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::config("cannot batch zero samples"));
        }
        let first = samples[0].dims();
        for s in samples {
            s.validate()?;
            if s.dims() != first {
                return Err(Error::shape("batch", format!("sample {:?} vs {:?}", s.dims(), first)));
            }
        }
        let stack = |f: fn(&StereoSample<T>) -> &Tensor<T>| {
            Tensor::stack(&samples.iter().map(f).collect::<Vec<_>>())
        };
        Ok(Batch {
            left: stack(|s| &s.left)?,
            right: stack(|s| &s.right)?,
            gt: stack(|s| &s.gt)?,
            valid: samples.iter().flat_map(|s| s.valid.iter().copied()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.left.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// SplitMix64 finalizer over `a` and `b`; derives independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a.wrapping_add(b.wrapping_mul(0x9e3779b97f4a7c15)).wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Where samples come from.
#[derive(Debug, Clone)]
pub enum Dataset<T> {
    /// A fixed, in-memory list (for example loaded from a manifest).
    Samples(Vec<StereoSample<T>>),
    /// Random-dot stereograms; sample `i` uses seed `mix_seed(rds.seed, i)`.
    /// `len: None` is an unlimited stream.
    Generated { rds: RdsConfig, len: Option<usize> },
}

impl<T: Real> Dataset<T> {
    pub fn len(&self) -> Option<usize> {
        match self {
            Dataset::Samples(s) => Some(s.len()),
            Dataset::Generated { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    pub fn get(&self, index: usize) -> Result<StereoSample<T>> {
        match self {
            Dataset::Samples(s) => s
                .get(index)
                .cloned()
                .ok_or_else(|| Error::config(format!("sample {index} out of range ({} samples)", s.len()))),
            Dataset::Generated { rds, len } => {
                if len.is_some_and(|n| index >= n) {
                    return Err(Error::config(format!("sample {index} out of range")));
                }
                generate_rds(&rds.with_seed(mix_seed(rds.seed, index as u64)))
            }
        }
    }

    /// Materialize the first `n` samples.
    pub fn take(&self, n: usize) -> Result<Vec<StereoSample<T>>> {
        (0..n).map(|i| self.get(i)).collect()
    }
}

/// Deterministic, epoch-shuffled batching with on-the-fly augmentation.
///
/// Batch `i` is a pure function of `(seed, i)`, so a resumed run sees the
/// same stream as an uninterrupted one. The last batch of an epoch may be
/// short.
#[derive(Debug, Clone)]
pub struct Loader<T> {
    pub dataset: Dataset<T>,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: Option<AugmentConfig>,
}

impl<T: Real> Loader<T> {
    pub fn new(dataset: Dataset<T>, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if dataset.is_empty() {
            return Err(Error::config("dataset is empty"));
        }
        Ok(Loader { dataset, batch_size, seed, augment: None })
    }

    pub fn with_augment(mut self, cfg: AugmentConfig) -> Self {
        self.augment = Some(cfg);
        self
    }

    pub fn batches_per_epoch(&self) -> Option<usize> {
        self.dataset.len().map(|n| n.div_ceil(self.batch_size))
    }

    /// Sample order for `epoch`.
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let n = self.dataset.len().unwrap_or(0);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(self.seed, epoch)));
        order
    }

    /// `(sample index, augmentation seed)` pairs of batch `iteration`.
    pub fn batch_plan(&self, iteration: u64) -> Vec<(usize, u64)> {
        match self.batches_per_epoch() {
            Some(per_epoch) => {
                let epoch = iteration / per_epoch as u64;
                let b = (iteration % per_epoch as u64) as usize;
                let order = self.epoch_order(epoch);
                let end = ((b + 1) * self.batch_size).min(order.len());
                order[b * self.batch_size..end]
                    .iter()
                    .map(|&i| (i, mix_seed(mix_seed(self.seed, epoch), i as u64)))
                    .collect()
            }
            None => (0..self.batch_size)
                .map(|k| {
                    let s = mix_seed(self.seed ^ 0xa5a5, iteration * self.batch_size as u64 + k as u64);
                    (s as usize, s)
                })
                .collect(),
        }
    }

    pub fn batch(&self, iteration: u64) -> Result<Batch<T>> {
        let samples = self
            .batch_plan(iteration)
            .into_iter()
            .map(|(index, aug_seed)| {
                let s = match (&self.dataset, self.dataset.len()) {
                    (Dataset::Generated { rds, .. }, None) => generate_rds(&rds.with_seed(index as u64))?,
                    _ => self.dataset.get(index)?,
                };
                match &self.augment {
                    Some(cfg) => augment(&s, cfg, aug_seed),
                    None => Ok(s),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Batch::from_samples(&samples)
    }
}

/// One manifest entry: `left<TAB>right<TAB>gt.pfm`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub left: PathBuf,
    pub right: PathBuf,
    pub gt: PathBuf,
}

/// Parse a manifest; relative paths resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        let [l, r, g] = parts[..] else {
            return Err(Error::config(format!("manifest line {}: expected 3 tab-separated paths, got {}", n + 1, parts.len())));
        };
        let p = |s: &str| base.join(s.trim());
        out.push(ManifestEntry { left: p(l), right: p(r), gt: p(g) });
    }
    if out.is_empty() {
        return Err(Error::config("manifest lists no samples"));
    }
    Ok(out)
}

/// Load every sample of a manifest. Ground truth that is non-finite or
/// negative is marked invalid.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<StereoSample<f32>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).context(path.display().to_string())?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base)?.iter().map(load_entry).collect()
}

pub fn load_entry(e: &ManifestEntry) -> Result<StereoSample<f32>> {
    let left = read_image(&e.left)?;
    let right = read_image(&e.right)?;
    let (gt, _) = read_pfm(&e.gt)?;
    if gt.shape()[0] != 1 {
        return Err(Error::config(format!("{}: disparity must have one channel", e.gt.display())));
    }
    let valid = gt.data().iter().map(|v| v.is_finite() && *v >= 0.0).collect();
    let gt = gt.map(|v| if v.is_finite() { v } else { 0.0 });
    let s = StereoSample { left, right, gt, valid };
    s.validate().context(e.left.display().to_string())?;
    Ok(s)
}

/// Write samples as PNM/PFM files plus a `manifest.tsv` in `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[StereoSample<f32>]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).context(dir.display().to_string())?;
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let ext = if s.dims().0 == 1 { "pgm" } else { "ppm" };
        let (l, r, g) = (format!("{i:05}_left.{ext}"), format!("{i:05}_right.{ext}"), format!("{i:05}_disp.pfm"));
        write_image(dir.join(&l), &s.left)?;
        write_image(dir.join(&r), &s.right)?;
        // Invalid pixels are stored as +inf so they survive the round trip.
        let gt = Tensor::from_fn(s.gt.shape().to_vec(), |i| if s.valid[i] { s.gt.data()[i] } else { f32::INFINITY });
        write_pfm(dir.join(&g), &gt, -1.0)?;
        manifest.push_str(&format!("{l}\t{r}\t{g}\n"));
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest).context(path.display().to_string())?;
    Ok(path)
}
