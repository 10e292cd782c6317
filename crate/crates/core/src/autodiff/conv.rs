//! Convolution and transposed convolution kernels (im2col + GEMM).

use crate::error::{Error, Result};
use crate::gemm::matmul;
use crate::tensor::Real;

/// Hyperparameters of a square 2-d convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    /// Stride-1 convolution padded so spatial size is preserved.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Self {
        let rf = receptive_field(kernel, dilation);
        ConvSpec { kernel, dilation, stride: 1, padding: rf / 2, in_channels, out_channels }
    }

    /// "Same" padding but with the given stride (output is `ceil(H / stride)`).
    pub fn strided(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        ConvSpec { stride, ..Self::same(in_channels, out_channels, kernel, 1) }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::same(in_channels, out_channels, 1, 1)
    }

    pub fn with_dilation(self, dilation: usize) -> Self {
        Self::same(self.in_channels, self.out_channels, self.kernel, dilation)
    }

    /// Extent of the input seen by one output value: `(k-1)(d-1) + k`.
    pub fn receptive_field(&self) -> usize {
        receptive_field(self.kernel, self.dilation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::config(format!("kernel size {} must be odd", self.kernel)));
        }
        if self.dilation == 0 || self.stride == 0 {
            return Err(Error::config(format!(
                "dilation ({}) and stride ({}) must be >= 1",
                self.dilation, self.stride
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("channel counts must be positive"));
        }
        Ok(())
    }

    /// Output extent along one spatial axis, or `None` when the padded input
    /// is smaller than the receptive field.
    pub fn output_len(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        let rf = self.receptive_field();
        (padded >= rf).then(|| (padded - rf) / self.stride + 1)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }
}

pub fn receptive_field(kernel: usize, dilation: usize) -> usize {
    (kernel - 1) * (dilation - 1) + kernel
}

/// Transposed convolution. Weights are laid out `[Cin, Cout, k, k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DeconvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl DeconvSpec {
    /// The 4x4, stride-2, pad-1 upsampler: exactly doubles H and W.
    pub fn upsample2(in_channels: usize, out_channels: usize) -> Self {
        DeconvSpec { kernel: 4, stride: 2, padding: 1, in_channels, out_channels }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::config("deconvolution stride must be positive"));
        }
        if self.kernel == 0 || 2 * self.padding >= self.kernel + self.stride {
            return Err(Error::config(format!(
                "deconvolution kernel {} with padding {} is degenerate",
                self.kernel, self.padding
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("channel counts must be positive"));
        }
        Ok(())
    }

    pub fn output_len(&self, input: usize) -> usize {
        (input - 1) * self.stride + self.kernel - 2 * self.padding
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.in_channels, self.out_channels, self.kernel, self.kernel]
    }
}

/// Sliding-window geometry shared by im2col and col2im. `(c, h, w)` is the
/// "image" side and `(oh, ow)` the "column" side.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub d: usize,
    pub s: usize,
    pub p: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `[lo, hi)` whose tap at offset `off` lands inside `0..len`.
    fn valid_range(off: isize, s: usize, len: usize, out: usize) -> (usize, usize) {
        let s = s as isize;
        let lo = if off < 0 { ((-off) + s - 1) / s } else { 0 };
        let hi = if (len as isize) > off { ((len as isize - off) + s - 1) / s } else { 0 };
        let lo = (lo as usize).min(out);
        let hi = (hi as usize).clamp(lo, out);
        (lo, hi)
    }

    fn is_identity(&self) -> bool {
        self.k == 1 && self.s == 1 && self.p == 0
    }
}

pub(crate) fn im2col<T: Real>(img: &[T], g: &Geometry, col: &mut [T]) {
    debug_assert_eq!(img.len(), g.c * g.h * g.w);
    debug_assert_eq!(col.len(), g.rows() * g.cols());
    let plane = g.cols();
    for c in 0..g.c {
        let src = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            let yoff = (ki * g.d) as isize - g.p as isize;
            let (ylo, yhi) = Geometry::valid_range(yoff, g.s, g.h, g.oh);
            for kj in 0..g.k {
                let xoff = (kj * g.d) as isize - g.p as isize;
                let (xlo, xhi) = Geometry::valid_range(xoff, g.s, g.w, g.ow);
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                dst[..ylo * g.ow].fill(T::zero());
                dst[yhi * g.ow..].fill(T::zero());
                for oy in ylo..yhi {
                    let iy = (oy * g.s) as isize + yoff;
                    let line = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    out[..xlo].fill(T::zero());
                    out[xhi..].fill(T::zero());
                    if xlo < xhi {
                        let ix0 = ((xlo * g.s) as isize + xoff) as usize;
                        if g.s == 1 {
                            out[xlo..xhi].copy_from_slice(&line[ix0..ix0 + (xhi - xlo)]);
                        } else {
                            for (j, o) in out[xlo..xhi].iter_mut().enumerate() {
                                *o = line[ix0 + j * g.s];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add columns back onto the image (adjoint of [`im2col`]).
pub(crate) fn col2im<T: Real>(col: &[T], g: &Geometry, img: &mut [T]) {
    debug_assert_eq!(img.len(), g.c * g.h * g.w);
    debug_assert_eq!(col.len(), g.rows() * g.cols());
    let plane = g.cols();
    for c in 0..g.c {
        let dst = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            let yoff = (ki * g.d) as isize - g.p as isize;
            let (ylo, yhi) = Geometry::valid_range(yoff, g.s, g.h, g.oh);
            for kj in 0..g.k {
                let xoff = (kj * g.d) as isize - g.p as isize;
                let (xlo, xhi) = Geometry::valid_range(xoff, g.s, g.w, g.ow);
                if xlo >= xhi {
                    continue;
                }
                let row = (c * g.k + ki) * g.k + kj;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in ylo..yhi {
                    let iy = ((oy * g.s) as isize + yoff) as usize;
                    let line = &mut dst[iy * g.w..(iy + 1) * g.w];
                    let ix0 = ((xlo * g.s) as isize + xoff) as usize;
                    let s = &src[oy * g.ow + xlo..oy * g.ow + xhi];
                    if g.s == 1 {
                        for (o, v) in line[ix0..ix0 + s.len()].iter_mut().zip(s) {
                            *o += *v;
                        }
                    } else {
                        for (j, v) in s.iter().enumerate() {
                            line[ix0 + j * g.s] += *v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvShapes {
    pub n: usize,
    pub geom: Geometry,
    /// Rows of the weight matrix: Cout for conv, Cin for deconv.
    pub wrows: usize,
}

impl ConvShapes {
    pub fn conv(input: [usize; 4], spec: &ConvSpec) -> Result<Self> {
        spec.validate()?;
        let [n, c, h, w] = input;
        if c != spec.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {} != spec in_channels {}", c, spec.in_channels),
            ));
        }
        let oh = spec.output_len(h).ok_or_else(|| {
            Error::shape("conv2d", format!("height {h} smaller than receptive field {}", spec.receptive_field()))
        })?;
        let ow = spec.output_len(w).ok_or_else(|| {
            Error::shape("conv2d", format!("width {w} smaller than receptive field {}", spec.receptive_field()))
        })?;
        let geom =
            Geometry { c, h, w, k: spec.kernel, d: spec.dilation, s: spec.stride, p: spec.padding, oh, ow };
        Ok(ConvShapes { n, geom, wrows: spec.out_channels })
    }

    /// For a transposed conv the "image" side of the geometry is the output.
    pub fn deconv(input: [usize; 4], spec: &DeconvSpec) -> Result<Self> {
        spec.validate()?;
        let [n, c, h, w] = input;
        if c != spec.in_channels {
            return Err(Error::shape(
                "deconv2d",
                format!("input channels {} != spec in_channels {}", c, spec.in_channels),
            ));
        }
        let geom = Geometry {
            c: spec.out_channels,
            h: spec.output_len(h),
            w: spec.output_len(w),
            k: spec.kernel,
            d: 1,
            s: spec.stride,
            p: spec.padding,
            oh: h,
            ow: w,
        };
        Ok(ConvShapes { n, geom, wrows: spec.in_channels })
    }
}

pub(crate) fn check_weights(op: &'static str, w: &[usize], want: [usize; 4], bias: Option<&[usize]>, nb: usize) -> Result<()> {
    if w != want {
        let names = ["out_channels", "in_channels", "kernel_h", "kernel_w"];
        let names = if op == "deconv2d" { ["in_channels", "out_channels", "kernel_h", "kernel_w"] } else { names };
        let idx = (0..w.len().min(4)).find(|&i| w[i] != want[i]).unwrap_or(0);
        return Err(Error::shape(
            op,
            format!("weight shape {w:?} != expected {want:?} (dimension {})", names[idx]),
        ));
    }
    if let Some(b) = bias {
        if b != [nb] {
            return Err(Error::shape(op, format!("bias shape {b:?} != [{nb}]")));
        }
    }
    Ok(())
}

pub(crate) fn conv2d_forward<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, sh: &ConvShapes) -> Vec<T> {
    let g = &sh.geom;
    let kk = g.rows();
    let p = g.cols();
    let in_plane = g.c * g.h * g.w;
    let out_plane = sh.wrows * p;
    let mut out = vec![T::zero(); sh.n * out_plane];
    let mut col = if g.is_identity() { Vec::new() } else { vec![T::zero(); kk * p] };
    for n in 0..sh.n {
        let xn = &x[n * in_plane..(n + 1) * in_plane];
        let cols: &[T] = if g.is_identity() {
            xn
        } else {
            im2col(xn, g, &mut col);
            &col
        };
        let yn = &mut out[n * out_plane..(n + 1) * out_plane];
        matmul(sh.wrows, kk, p, w, false, cols, false, yn, false);
        if let Some(b) = b {
            for (row, &bv) in yn.chunks_exact_mut(p).zip(b) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Returns `(dx, dw, db)`; `dx` only when `need_input`.
pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    sh: &ConvShapes,
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let g = &sh.geom;
    let kk = g.rows();
    let p = g.cols();
    let in_plane = g.c * g.h * g.w;
    let out_plane = sh.wrows * p;
    let mut dw = vec![T::zero(); sh.wrows * kk];
    let mut db = vec![T::zero(); sh.wrows];
    let mut dx = need_input.then(|| vec![T::zero(); sh.n * in_plane]);
    let mut col = if g.is_identity() { Vec::new() } else { vec![T::zero(); kk * p] };
    let mut dcol = if need_input && !g.is_identity() { vec![T::zero(); kk * p] } else { Vec::new() };
    for n in 0..sh.n {
        let xn = &x[n * in_plane..(n + 1) * in_plane];
        let dyn_ = &dy[n * out_plane..(n + 1) * out_plane];
        let cols: &[T] = if g.is_identity() {
            xn
        } else {
            im2col(xn, g, &mut col);
            &col
        };
        matmul(sh.wrows, p, kk, dyn_, false, cols, true, &mut dw, true);
        for (acc, row) in db.iter_mut().zip(dyn_.chunks_exact(p)) {
            *acc += row.iter().copied().sum::<T>();
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * in_plane..(n + 1) * in_plane];
            if g.is_identity() {
                matmul(kk, sh.wrows, p, w, true, dyn_, false, dxn, true);
            } else {
                matmul(kk, sh.wrows, p, w, true, dyn_, false, &mut dcol, false);
                col2im(&dcol, g, dxn);
            }
        }
    }
    (dx, dw, db)
}

pub(crate) fn deconv2d_forward<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, sh: &ConvShapes) -> Vec<T> {
    let g = &sh.geom;
    let kk = g.rows();
    let p = g.cols();
    let in_plane = sh.wrows * p;
    let out_plane = g.c * g.h * g.w;
    let mut out = vec![T::zero(); sh.n * out_plane];
    let mut col = vec![T::zero(); kk * p];
    for n in 0..sh.n {
        let xn = &x[n * in_plane..(n + 1) * in_plane];
        matmul(kk, sh.wrows, p, w, true, xn, false, &mut col, false);
        let yn = &mut out[n * out_plane..(n + 1) * out_plane];
        col2im(&col, g, yn);
        if let Some(b) = b {
            let hw = g.h * g.w;
            for (plane, &bv) in yn.chunks_exact_mut(hw).zip(b) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

pub(crate) fn deconv2d_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    sh: &ConvShapes,
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let g = &sh.geom;
    let kk = g.rows();
    let p = g.cols();
    let in_plane = sh.wrows * p;
    let out_plane = g.c * g.h * g.w;
    let hw = g.h * g.w;
    let mut dw = vec![T::zero(); sh.wrows * kk];
    let mut db = vec![T::zero(); g.c];
    let mut dx = need_input.then(|| vec![T::zero(); sh.n * in_plane]);
    let mut col = vec![T::zero(); kk * p];
    for n in 0..sh.n {
        let xn = &x[n * in_plane..(n + 1) * in_plane];
        let dyn_ = &dy[n * out_plane..(n + 1) * out_plane];
        im2col(dyn_, g, &mut col);
        matmul(sh.wrows, p, kk, xn, false, &col, true, &mut dw, true);
        for (acc, plane) in db.iter_mut().zip(dyn_.chunks_exact(hw)) {
            *acc += plane.iter().copied().sum::<T>();
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * in_plane..(n + 1) * in_plane];
            matmul(sh.wrows, kk, p, w, false, &col, false, dxn, true);
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_len_formula() {
        let s = ConvSpec { kernel: 3, dilation: 3, stride: 2, padding: 3, in_channels: 1, out_channels: 1 };
        // rf = 7; floor((10 + 6 - 7) / 2) + 1 = 5
        assert_eq!(s.output_len(10), Some(5));
        assert_eq!(ConvSpec::same(1, 1, 3, 8).output_len(13), Some(13));
        let tight = ConvSpec { padding: 0, ..ConvSpec::same(1, 1, 3, 8) };
        assert_eq!(tight.output_len(16), None);
    }

    #[test]
    fn even_kernel_rejected() {
        let s = ConvSpec { kernel: 4, ..ConvSpec::same(1, 1, 3, 1) };
        assert!(matches!(s.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn deconv_doubles() {
        assert_eq!(DeconvSpec::upsample2(1, 1).output_len(16), 32);
        let unit = DeconvSpec { kernel: 2, stride: 2, padding: 0, in_channels: 1, out_channels: 1 };
        assert_eq!(unit.output_len(16), 32);
        assert!(DeconvSpec { stride: 0, ..unit }.validate().is_err());
    }

    #[test]
    fn valid_range_handles_stride_and_padding() {
        // offsets -2, stride 2, len 5, out 4 => taps at -2,0,2,4 -> valid 1..4
        assert_eq!(Geometry::valid_range(-2, 2, 5, 4), (1, 4));
        assert_eq!(Geometry::valid_range(3, 1, 5, 5), (0, 2));
        assert_eq!(Geometry::valid_range(9, 1, 5, 5), (0, 0));
    }
}
