//! 1x1 horizontal correlation: one output channel per disparity level.

use crate::tensor::Real;

/// `out[n,d,y,x] = (1/C) sum_c left[n,c,y,x] * right[n,c,y,x-d]`, zero where
/// `x < d`.
pub(crate) fn forward<T: Real>(left: &[T], right: &[T], [n, c, h, w]: [usize; 4], levels: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); n * levels * hw];
    let norm = T::one() / T::lit(c as f64);
    for b in 0..n {
        for d in 0..levels.min(w) {
            let o = &mut out[(b * levels + d) * hw..(b * levels + d + 1) * hw];
            for ch in 0..c {
                let l = &left[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                let r = &right[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                for y in 0..h {
                    let row = y * w;
                    let (orow, lrow, rrow) = (&mut o[row + d..row + w], &l[row + d..row + w], &r[row..row + w - d]);
                    for ((ov, lv), rv) in orow.iter_mut().zip(lrow).zip(rrow) {
                        *ov += *lv * *rv;
                    }
                }
            }
            o.iter_mut().for_each(|v| *v *= norm);
        }
    }
    out
}

pub(crate) fn backward<T: Real>(
    left: &[T],
    right: &[T],
    dy: &[T],
    [n, c, h, w]: [usize; 4],
    levels: usize,
    need_left: bool,
    need_right: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let hw = h * w;
    let norm = T::one() / T::lit(c as f64);
    let mut dl = need_left.then(|| vec![T::zero(); left.len()]);
    let mut dr = need_right.then(|| vec![T::zero(); right.len()]);
    for b in 0..n {
        for d in 0..levels.min(w) {
            let g = &dy[(b * levels + d) * hw..(b * levels + d + 1) * hw];
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for y in 0..h {
                    let row = y * w;
                    let grow = &g[row + d..row + w];
                    if let Some(dl) = dl.as_mut() {
                        let rrow = &right[base + row..base + row + w - d];
                        let dst = &mut dl[base + row + d..base + row + w];
                        for ((o, gv), rv) in dst.iter_mut().zip(grow).zip(rrow) {
                            *o += *gv * *rv * norm;
                        }
                    }
                    if let Some(dr) = dr.as_mut() {
                        let lrow = &left[base + row + d..base + row + w];
                        let dst = &mut dr[base + row..base + row + w - d];
                        for ((o, gv), lv) in dst.iter_mut().zip(grow).zip(lrow) {
                            *o += *gv * *lv * norm;
                        }
                    }
                }
            }
        }
    }
    (dl, dr)
}
