//! Direct nested-loop definitions of the forward kernels and sweeps that
//! compare the library against them. Shared with the acceptance harness.

use disco_core::autodiff::{ConvSpec, DeconvSpec};
use disco_core::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-10;

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Batch, channel, height and width combinations up to 2 x 8 x 16 x 24.
pub fn shapes() -> Vec<[usize; 4]> {
    let mut v = Vec::new();
    for n in [1, 2] {
        for c in [1, 3, 8] {
            for h in [1, 2, 5, 9, 16] {
                for w in [1, 3, 8, 13, 24] {
                    v.push([n, c, h, w]);
                }
            }
        }
    }
    v
}

pub fn conv_oracle(x: &Tensor<f64>, wt: &Tensor<f64>, b: &[f64], s: &ConvSpec) -> Option<Tensor<f64>> {
    let [n, c, h, w] = x.dims4("oracle").unwrap();
    let oh = s.output_len(h)?;
    let ow = s.output_len(w)?;
    let mut out = Tensor::zeros(vec![n, s.out_channels, oh, ow]);
    for bi in 0..n {
        for o in 0..s.out_channels {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b[o];
                    for ci in 0..c {
                        for ky in 0..s.kernel {
                            for kx in 0..s.kernel {
                                let iy = (y * s.stride + ky * s.dilation) as isize - s.padding as isize;
                                let ix = (xx * s.stride + kx * s.dilation) as isize - s.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += wt.at(o, ci, ky, kx) * x.at(bi, ci, iy as usize, ix as usize);
                            }
                        }
                    }
                    out.data_mut()[((bi * s.out_channels + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    Some(out)
}

pub fn deconv_oracle(x: &Tensor<f64>, wt: &Tensor<f64>, b: &[f64], s: &DeconvSpec) -> Tensor<f64> {
    let [n, c, h, w] = x.dims4("oracle").unwrap();
    let (oh, ow) = (s.output_len(h), s.output_len(w));
    let mut out = Tensor::from_fn([n, s.out_channels, oh, ow], |i| b[(i / (oh * ow)) % s.out_channels]);
    for bi in 0..n {
        for ci in 0..c {
            for iy in 0..h {
                for ix in 0..w {
                    for o in 0..s.out_channels {
                        for ky in 0..s.kernel {
                            for kx in 0..s.kernel {
                                let oy = (iy * s.stride + ky) as isize - s.padding as isize;
                                let ox = (ix * s.stride + kx) as isize - s.padding as isize;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                let idx = ((bi * s.out_channels + o) * oh + oy as usize) * ow + ox as usize;
                                out.data_mut()[idx] += x.at(bi, ci, iy, ix) * wt.at(ci, o, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn maxpool_oracle(x: &Tensor<f64>, k: usize, s: usize) -> Tensor<f64> {
    let [n, c, h, w] = x.dims4("oracle").unwrap();
    let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
    Tensor::from_fn([n, c, oh, ow], |i| {
        let (xx, y, p) = (i % ow, (i / ow) % oh, i / (oh * ow));
        let mut m = f64::NEG_INFINITY;
        for ky in 0..k {
            for kx in 0..k {
                m = m.max(x.at(p / c, p % c, y * s + ky, xx * s + kx));
            }
        }
        m
    })
}

pub fn correlation_oracle(l: &Tensor<f64>, r: &Tensor<f64>, levels: usize) -> Tensor<f64> {
    let [n, c, h, w] = l.dims4("oracle").unwrap();
    Tensor::from_fn([n, levels, h, w], |i| {
        let (x, y, d, b) = (i % w, (i / w) % h, (i / (w * h)) % levels, i / (w * h * levels));
        if x < d {
            return 0.0;
        }
        (0..c).map(|ch| l.at(b, ch, y, x) * r.at(b, ch, y, x - d)).sum::<f64>() / c as f64
    })
}

/// Number of cases compared and the largest absolute difference seen.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sweep {
    pub cases: usize,
    pub worst: f64,
}

impl Sweep {
    fn record(&mut self, got: &Tensor<f64>, want: &Tensor<f64>, what: &str) {
        assert_eq!(got.shape(), want.shape(), "{what}");
        self.cases += 1;
        self.worst = self.worst.max(got.max_abs_diff(want));
    }
}

pub fn conv2d_sweep() -> Sweep {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut sweep = Sweep::default();
    for dims in shapes() {
        for kernel in [1, 3, 5] {
            let spec = ConvSpec {
                stride: rng.random_range(1..=2),
                ..ConvSpec::same(dims[1], rng.random_range(1..=8), kernel, rng.random_range(1..=3))
            };
            let x = random(&mut rng, &dims);
            let wt = random(&mut rng, &spec.weight_shape());
            let b: Vec<f64> = (0..spec.out_channels).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut g = Graph::new();
            let (xv, wv, bv) = (g.constant(x.clone()), g.constant(wt.clone()), g.constant(Tensor::new(vec![b.len()], b.clone()).unwrap()));
            let got = g.conv2d(xv, wv, Some(bv), &spec);
            match conv_oracle(&x, &wt, &b, &spec) {
                Some(want) => sweep.record(g.value(got.unwrap()), &want, &format!("conv {dims:?} {spec:?}")),
                None => assert!(got.is_err(), "{dims:?} {spec:?} should be rejected"),
            }
        }
    }
    sweep
}

pub fn deconv2d_sweep() -> Sweep {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut sweep = Sweep::default();
    for dims in shapes() {
        for (kernel, stride, padding) in [(4, 2, 1), (3, 1, 1), (2, 2, 0), (3, 2, 1)] {
            let spec = DeconvSpec { kernel, stride, padding, in_channels: dims[1], out_channels: rng.random_range(1..=8) };
            if spec.output_len(dims[2]) == 0 || spec.output_len(dims[3]) == 0 {
                continue;
            }
            let x = random(&mut rng, &dims);
            let wt = random(&mut rng, &spec.weight_shape());
            let b: Vec<f64> = (0..spec.out_channels).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut g = Graph::new();
            let (xv, wv, bv) = (g.constant(x.clone()), g.constant(wt.clone()), g.constant(Tensor::new(vec![b.len()], b.clone()).unwrap()));
            let got = g.deconv2d(xv, wv, Some(bv), &spec).unwrap();
            sweep.record(g.value(got), &deconv_oracle(&x, &wt, &b, &spec), &format!("deconv {dims:?} {spec:?}"));
        }
    }
    sweep
}

pub fn maxpool2d_sweep() -> Sweep {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sweep = Sweep::default();
    for dims in shapes() {
        for (k, s) in [(1, 1), (2, 2), (3, 2), (2, 1), (3, 3)] {
            if k > dims[2] || k > dims[3] {
                continue;
            }
            let x = random(&mut rng, &dims);
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let got = g.maxpool2d(xv, k, s).unwrap();
            sweep.record(g.value(got), &maxpool_oracle(&x, k, s), &format!("maxpool {dims:?} k{k} s{s}"));
        }
    }
    sweep
}

pub fn correlation_sweep() -> Sweep {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut sweep = Sweep::default();
    for dims in shapes() {
        for levels in [1, 2, 5, 8] {
            let (l, r) = (random(&mut rng, &dims), random(&mut rng, &dims));
            let mut g = Graph::new();
            let (lv, rv) = (g.constant(l.clone()), g.constant(r.clone()));
            let got = g.correlation(lv, rv, levels).unwrap();
            sweep.record(g.value(got), &correlation_oracle(&l, &r, levels), &format!("correlation {dims:?} D{levels}"));
        }
    }
    sweep
}
