use std::fs;
use std::path::{Path, PathBuf};

use disco_core::checkpoint::{stored_dtype, Checkpoint};
use disco_core::data::{read_image, read_pfm, write_pfm};
use disco_core::error::{Result, ResultExt};
use disco_core::model::INPUT_MULTIPLE;
use disco_core::train::{clamp_disparity, disparity_to_depth, CameraParams};
use disco_core::{DType, Real, Tensor};

#[derive(Debug, Clone)]
pub struct InferArgs {
    pub checkpoint: PathBuf,
    pub left: PathBuf,
    pub right: PathBuf,
    pub out: PathBuf,
    pub auto_pad: bool,
    pub camera: Option<CameraParams>,
    pub depth_out: Option<PathBuf>,
}

/// `.pfm` files are read as floats, anything else as 8-bit PGM/PPM.
pub fn read_view(path: &Path) -> Result<Tensor<f32>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm")) {
        Ok(read_pfm(path)?.0)
    } else {
        read_image(path)
    }
}

/// Replicate the last row and column until both sides are multiples of `m`.
pub fn pad_to_multiple(t: &Tensor<f32>, m: usize) -> Tensor<f32> {
    let [c, h, w] = [t.shape()[0], t.shape()[1], t.shape()[2]];
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    Tensor::from_fn([c, ph, pw], |i| {
        let (x, y, ch) = (i % pw, (i / pw) % ph, i / (pw * ph));
        t.data()[(ch * h + y.min(h - 1)) * w + x.min(w - 1)]
    })
}

pub fn crop_to(t: &Tensor<f32>, h: usize, w: usize) -> Tensor<f32> {
    let [c, ph, pw] = [t.shape()[0], t.shape()[1], t.shape()[2]];
    Tensor::from_fn([c, h, w], |i| {
        let (x, y, ch) = (i % w, (i / w) % h, i / (w * h));
        t.data()[(ch * ph + y) * pw + x]
    })
}

/// Returns the written disparity (and depth) paths.
pub fn run(a: &InferArgs) -> Result<Vec<PathBuf>> {
    let left = read_view(&a.left)?;
    let right = read_view(&a.right)?;
    if left.shape() != right.shape() {
        return Err(disco_core::Error::shape(
            "infer",
            format!("left {:?} and right {:?} differ", left.shape(), right.shape()),
        ));
    }
    let (h, w) = (left.shape()[1], left.shape()[2]);
    let (l, r) = if a.auto_pad {
        (pad_to_multiple(&left, INPUT_MULTIPLE), pad_to_multiple(&right, INPUT_MULTIPLE))
    } else {
        (left, right)
    };
    let bytes = fs::read(&a.checkpoint).context(a.checkpoint.display().to_string())?;
    let disp = match stored_dtype(&bytes)? {
        DType::F32 => predict::<f32>(&bytes, &l, &r)?,
        DType::F64 => predict::<f64>(&bytes, &l.cast(), &r.cast())?.cast(),
    };
    let disp = crop_to(&disp, h, w);
    write_pfm(&a.out, &disp, -1.0)?;
    let mut written = vec![a.out.clone()];
    if let Some(cam) = a.camera {
        let (depth, _) = disparity_to_depth(&disp, cam);
        let path = a.depth_out.clone().unwrap_or_else(|| a.out.with_extension("depth.pfm"));
        write_pfm(&path, &depth, -1.0)?;
        written.push(path);
    }
    Ok(written)
}

/// Final disparity `[1, H, W]`, clamped at zero.
fn predict<T: Real>(bytes: &[u8], left: &Tensor<T>, right: &Tensor<T>) -> Result<Tensor<T>> {
    let model = Checkpoint::<T>::decode(bytes)?.model()?;
    let add_batch = |t: &Tensor<T>| t.clone().reshape([1, t.shape()[0], t.shape()[1], t.shape()[2]]);
    let p = model.predict(&add_batch(left)?, &add_batch(right)?)?;
    let d = clamp_disparity(p.final_disparity());
    let s = d.shape().to_vec();
    d.reshape([1, s[2], s[3]])
}
