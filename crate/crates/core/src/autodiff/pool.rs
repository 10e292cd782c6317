use crate::error::{Error, Result};
use crate::tensor::Real;

pub(crate) fn output_dims(h: usize, w: usize, kernel: usize, stride: usize) -> Result<(usize, usize)> {
    if kernel == 0 || stride == 0 {
        return Err(Error::config(format!("max-pool kernel ({kernel}) and stride ({stride}) must be >= 1")));
    }
    if kernel > h || kernel > w {
        return Err(Error::config(format!("max-pool kernel {kernel} larger than input {h}x{w}")));
    }
    Ok(((h - kernel) / stride + 1, (w - kernel) / stride + 1))
}

/// Window maxima over every `H x W` plane. Returns the pooled values and,
/// per output, the in-plane index of the first (row-major) maximum.
pub(crate) fn maxpool_forward<T: Real>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
) -> (Vec<T>, Vec<u32>) {
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let plane = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_i = 0usize;
                for ky in 0..kernel {
                    let row = (oy * stride + ky) * w;
                    for kx in 0..kernel {
                        let i = row + ox * stride + kx;
                        if plane[i] > best {
                            best = plane[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i as u32);
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward<T: Real>(dy: &[T], arg: &[u32], planes: usize, hw: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); planes * hw];
    let per = dy.len() / planes;
    for p in 0..planes {
        let dst = &mut dx[p * hw..(p + 1) * hw];
        for (g, &i) in dy[p * per..(p + 1) * per].iter().zip(&arg[p * per..(p + 1) * per]) {
            dst[i as usize] += *g;
        }
    }
    dx
}
