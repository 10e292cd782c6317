//! End-point error, three-pixel error and disparity-to-depth conversion.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn check<T: Real>(pred: &[T], gt: &[T], valid: &[bool], what: &str) -> Result<usize> {
    if pred.len() != gt.len() || valid.len() != gt.len() {
        return Err(Error::shape(
            "metrics",
            format!("{what}: prediction {}, ground truth {}, mask {}", pred.len(), gt.len(), valid.len()),
        ));
    }
    match valid.iter().filter(|&&v| v).count() {
        0 => Err(Error::Degenerate(format!("{what} over an empty mask"))),
        n => Ok(n),
    }
}

/// Mean `|pred - gt|` over valid pixels.
pub fn epe<T: Real>(pred: &[T], gt: &[T], valid: &[bool]) -> Result<f64> {
    let n = check(pred, gt, valid, "EPE")?;
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .zip(valid)
        .filter(|(_, &v)| v)
        .map(|((&p, &g), _)| (p.as_f64() - g.as_f64()).abs())
        .sum();
    Ok(sum / n as f64)
}

/// Percentage of valid pixels with `|pred - gt| > 3` (strict).
pub fn three_pixel_error<T: Real>(pred: &[T], gt: &[T], valid: &[bool]) -> Result<f64> {
    let n = check(pred, gt, valid, "3PE")?;
    let bad = pred
        .iter()
        .zip(gt)
        .zip(valid)
        .filter(|((&p, &g), &v)| v && (p.as_f64() - g.as_f64()).abs() > 3.0)
        .count();
    Ok(100.0 * bad as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraParams {
    /// Focal length in pixels.
    pub focal: f64,
    /// Baseline in meters.
    pub baseline: f64,
}

impl CameraParams {
    pub fn new(focal: f64, baseline: f64) -> Result<Self> {
        if !(focal > 0.0 && focal.is_finite() && baseline > 0.0 && baseline.is_finite()) {
            return Err(Error::config(format!("focal {focal} and baseline {baseline} must be positive")));
        }
        Ok(CameraParams { focal, baseline })
    }
}

/// Depth value written for non-positive disparity.
pub const INVALID_DEPTH: f64 = -1.0;

/// `z = f B / d`; pixels with `d <= 0` get [`INVALID_DEPTH`] and a false
/// mask entry.
pub fn disparity_to_depth<T: Real>(disparity: &Tensor<T>, cam: CameraParams) -> (Tensor<T>, Vec<bool>) {
    let fb = cam.focal * cam.baseline;
    let mut mask = Vec::with_capacity(disparity.numel());
    let data = disparity
        .data()
        .iter()
        .map(|&d| {
            let d = d.as_f64();
            let ok = d > 0.0 && (fb / d).is_finite();
            mask.push(ok);
            T::lit(if ok { fb / d } else { INVALID_DEPTH })
        })
        .collect();
    (Tensor::new(disparity.shape().to_vec(), data).expect("same shape"), mask)
}
