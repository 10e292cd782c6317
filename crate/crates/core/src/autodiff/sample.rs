//! Bilinear resizing and horizontal disparity warping.

use crate::tensor::Real;

/// Source taps for one output coordinate under the align-corners-false
/// convention: `(i0, i1, frac)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap<T> {
    pub i0: usize,
    pub i1: usize,
    pub frac: T,
}

pub(crate) fn taps<T: Real>(input: usize, output: usize) -> Vec<Tap<T>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            Tap { i0, i1, frac: T::lit(frac) }
        })
        .collect()
}

pub(crate) fn resize_forward<T: Real>(
    x: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ty = taps::<T>(h, oh);
    let tx = taps::<T>(w, ow);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let one = T::one();
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for t in &ty {
            let r0 = &src[t.i0 * w..(t.i0 + 1) * w];
            let r1 = &src[t.i1 * w..(t.i1 + 1) * w];
            for s in &tx {
                let a = r0[s.i0] * (one - s.frac) + r0[s.i1] * s.frac;
                let b = r1[s.i0] * (one - s.frac) + r1[s.i1] * s.frac;
                out.push(a * (one - t.frac) + b * t.frac);
            }
        }
    }
    out
}

pub(crate) fn resize_backward<T: Real>(
    dy: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ty = taps::<T>(h, oh);
    let tx = taps::<T>(w, ow);
    let mut dx = vec![T::zero(); planes * h * w];
    let one = T::one();
    for p in 0..planes {
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        let g = &dy[p * oh * ow..(p + 1) * oh * ow];
        for (oy, t) in ty.iter().enumerate() {
            for (ox, s) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                let top = v * (one - t.frac);
                let bot = v * t.frac;
                dst[t.i0 * w + s.i0] += top * (one - s.frac);
                dst[t.i0 * w + s.i1] += top * s.frac;
                dst[t.i1 * w + s.i0] += bot * (one - s.frac);
                dst[t.i1 * w + s.i1] += bot * s.frac;
            }
        }
    }
    dx
}

/// Linear sample of `row` at real position `pos`; taps outside the row read 0.
#[inline]
pub(crate) fn sample_row<T: Real>(row: &[T], pos: T) -> (T, isize, T) {
    let f = pos.floor();
    let x0 = f.to_isize().unwrap_or(isize::MIN / 2);
    let frac = pos - f;
    let at = |i: isize| if i >= 0 && (i as usize) < row.len() { row[i as usize] } else { T::zero() };
    let v = at(x0) * (T::one() - frac) + at(x0 + 1) * frac;
    (v, x0, frac)
}

/// `out[n,c,y,x] = src[n,c,y, x - disp[n,0,y,x]]`, linearly interpolated.
pub(crate) fn warp_forward<T: Real>(src: &[T], disp: &[T], [n, c, h, w]: [usize; 4]) -> Vec<T> {
    let mut out = vec![T::zero(); n * c * h * w];
    for b in 0..n {
        for y in 0..h {
            let drow = &disp[(b * h + y) * w..(b * h + y + 1) * w];
            for ch in 0..c {
                let off = ((b * c + ch) * h + y) * w;
                let row = &src[off..off + w];
                let orow = &mut out[off..off + w];
                for x in 0..w {
                    let pos = T::lit(x as f64) - drow[x];
                    orow[x] = sample_row(row, pos).0;
                }
            }
        }
    }
    out
}

/// Returns `(d_src, d_disp)`.
pub(crate) fn warp_backward<T: Real>(
    src: &[T],
    disp: &[T],
    dy: &[T],
    [n, c, h, w]: [usize; 4],
    need_src: bool,
    need_disp: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let mut dsrc = need_src.then(|| vec![T::zero(); src.len()]);
    let mut ddisp = need_disp.then(|| vec![T::zero(); disp.len()]);
    let inside = |i: isize| i >= 0 && (i as usize) < w;
    for b in 0..n {
        for y in 0..h {
            let drow = &disp[(b * h + y) * w..(b * h + y + 1) * w];
            for ch in 0..c {
                let off = ((b * c + ch) * h + y) * w;
                let row = &src[off..off + w];
                for x in 0..w {
                    let g = dy[off + x];
                    let pos = T::lit(x as f64) - drow[x];
                    let f = pos.floor();
                    let x0 = f.to_isize().unwrap_or(isize::MIN / 2);
                    let frac = pos - f;
                    if let Some(ds) = dsrc.as_mut() {
                        if inside(x0) {
                            ds[off + x0 as usize] += g * (T::one() - frac);
                        }
                        if inside(x0 + 1) {
                            ds[off + (x0 + 1) as usize] += g * frac;
                        }
                    }
                    if let Some(dd) = ddisp.as_mut() {
                        let v0 = if inside(x0) { row[x0 as usize] } else { T::zero() };
                        let v1 = if inside(x0 + 1) { row[(x0 + 1) as usize] } else { T::zero() };
                        // d pos / d disp = -1
                        dd[(b * h + y) * w + x] -= g * (v1 - v0);
                    }
                }
            }
        }
    }
    (dsrc, ddisp)
}
