//! Central finite-difference checks of every differentiable op.
//!
//! Each case builds `loss = sum(op(inputs) * R)` for a fixed random `R` in
//! double precision and compares the analytic gradient of every input with
//! `(loss(x + h e_i) - loss(x - h e_i)) / 2h`. The error of one input is
//! `max|analytic - numeric| / max(max|numeric|, FLOOR)`; a case reports the
//! worst input. Inputs are drawn away from the kinks of ELU, max-pool, the
//! linear interpolation in warping and the Huber switch point.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ConvSpec, DeconvSpec, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Perturbation used for the central differences.
pub const STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Seeds per op in the default suite.
pub const SEEDS: u64 = 20;
/// Denominator floor so an all-zero gradient compares absolutely.
pub const FLOOR: f64 = 1e-6;

/// Every suite, in the order the full run reports them.
pub const OPS: &[&str] = &[
    "conv2d",
    "deconv2d",
    "elu",
    "maxpool2d",
    "upsample_bilinear",
    "concat",
    "correlation",
    "warp_horizontal",
    "huber_loss",
    "composed",
];

#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub op: &'static str,
    pub seeds: u64,
    /// Worst relative error over all seeds and inputs.
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// One differentiable expression of its inputs.
pub struct Case {
    pub inputs: Vec<Tensor<f64>>,
    build: Build,
}

impl Case {
    pub fn new(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static) -> Self {
        Case { inputs, build: Box::new(build) }
    }

    fn eval(&self, inputs: &[Tensor<f64>], r: &Tensor<f64>) -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = (self.build)(&mut g, &vars)?;
        let loss = weighted_sum(&mut g, out, r)?;
        Ok(g.value(loss).item())
    }

    /// Worst relative error over the inputs. `perturb` scales conv2d weight
    /// gradients in the analytic pass, to show a wrong gradient is caught.
    pub fn max_rel_error(&self, seed: u64, perturb: Option<f64>) -> Result<f64> {
        let mut g = Graph::new();
        if let Some(f) = perturb {
            g.perturb_conv_weight_grads(f);
        }
        let vars: Vec<Var> = self.inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = (self.build)(&mut g, &vars)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let r = uniform(&mut rng, g.shape(out), -1.0, 1.0);
        let loss = weighted_sum(&mut g, out, &r)?;
        let grads = g.backward(loss)?;

        let mut worst = 0.0f64;
        let mut probe = self.inputs.clone();
        for (k, &v) in vars.iter().enumerate() {
            let analytic = grads.get(&g, v);
            let mut numeric = Vec::with_capacity(analytic.numel());
            for i in 0..probe[k].numel() {
                let x = self.inputs[k].data()[i];
                probe[k].data_mut()[i] = x + STEP;
                let up = self.eval(&probe, &r)?;
                probe[k].data_mut()[i] = x - STEP;
                let down = self.eval(&probe, &r)?;
                probe[k].data_mut()[i] = x;
                numeric.push((up - down) / (2.0 * STEP));
            }
            let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(FLOOR);
            let diff = analytic.data().iter().zip(&numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
            worst = worst.max(diff / scale);
        }
        Ok(worst)
    }
}

fn weighted_sum(g: &mut Graph<f64>, out: Var, r: &Tensor<f64>) -> Result<Var> {
    let r = g.constant(r.clone());
    let p = g.mul(out, r)?;
    g.sum(p)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Values with `|v| >= 0.05`, so ELU never straddles zero.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// A shuffled ladder with spacing 0.05, so every pooling window has a
/// unique maximum that a perturbation of `STEP` cannot change.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).expect("sized")
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(1..=2), rng.random_range(4..=7), rng.random_range(4..=7))
}

/// The random case of `op` for `seed`.
pub fn case(op: &str, seed: u64) -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x100000001b3) ^ op.len() as u64);
    let (n, h, w) = dims(&mut rng);
    Ok(match op {
        "conv2d" => {
            let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let kernel = [1, 3][rng.random_range(0..2)];
            let spec = ConvSpec {
                stride: rng.random_range(1..=2),
                ..ConvSpec::same(cin, cout, kernel, rng.random_range(1..=2))
            };
            let x = uniform(&mut rng, &[n, cin, h, w], -1.0, 1.0);
            let wt = uniform(&mut rng, &spec.weight_shape(), -1.0, 1.0);
            let b = uniform(&mut rng, &[cout], -1.0, 1.0);
            Case::new(vec![x, wt, b], move |g, v| g.conv2d(v[0], v[1], Some(v[2]), &spec))
        }
        "deconv2d" => {
            let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let spec = if rng.random_bool(0.5) {
                DeconvSpec::upsample2(cin, cout)
            } else {
                DeconvSpec { kernel: 3, stride: 1, padding: 1, in_channels: cin, out_channels: cout }
            };
            let x = uniform(&mut rng, &[n, cin, h, w], -1.0, 1.0);
            let wt = uniform(&mut rng, &spec.weight_shape(), -1.0, 1.0);
            let b = uniform(&mut rng, &[cout], -1.0, 1.0);
            Case::new(vec![x, wt, b], move |g, v| g.deconv2d(v[0], v[1], Some(v[2]), &spec))
        }
        "elu" => {
            let alpha = rng.random_range(0.5..1.5);
            let x = off_zero(&mut rng, &[n, 2, h, w]);
            Case::new(vec![x], move |g, v| g.elu(v[0], alpha))
        }
        "maxpool2d" => {
            let (kernel, stride) = [(2, 2), (3, 2), (2, 1)][rng.random_range(0..3)];
            let x = distinct(&mut rng, &[n, 2, h, w]);
            Case::new(vec![x], move |g, v| g.maxpool2d(v[0], kernel, stride))
        }
        "upsample_bilinear" => {
            let factor = rng.random_range(2..=4);
            let x = uniform(&mut rng, &[n, 2, h, w], -1.0, 1.0);
            Case::new(vec![x], move |g, v| g.upsample_bilinear(v[0], factor))
        }
        "concat" => {
            let k = rng.random_range(2..=3);
            let xs = (0..k)
                .map(|_| {
                    let c = rng.random_range(1..=3);
                    uniform(&mut rng, &[n, c, h, w], -1.0, 1.0)
                })
                .collect();
            Case::new(xs, |g, v| g.concat_channels(v))
        }
        "correlation" => {
            let c = rng.random_range(1..=4);
            let levels = rng.random_range(1..=w.min(5));
            let l = uniform(&mut rng, &[n, c, h, w], -1.0, 1.0);
            let r = uniform(&mut rng, &[n, c, h, w], -1.0, 1.0);
            Case::new(vec![l, r], move |g, v| g.correlation(v[0], v[1], levels))
        }
        "warp_horizontal" => {
            let src = uniform(&mut rng, &[n, 2, h, w], -1.0, 1.0);
            // Integer part may push the tap out of the image; the fraction
            // stays clear of the interpolation kinks.
            let disp = Tensor::from_fn([n, 1, h, w], |_| {
                rng.random_range(0..3) as f64 + rng.random_range(0.1..0.9) * if rng.random_bool(0.2) { -1.0 } else { 1.0 }
            });
            Case::new(vec![src, disp], |g, v| g.warp_horizontal(v[0], v[1]))
        }
        "huber_loss" => {
            // Always include residuals close to the switch at |t| = 1.
            const NEAR: [f64; 8] = [0.9, 0.999, 1.001, 1.1, -0.9, -0.999, -1.001, -1.1];
            let numel = n * h * w;
            let pred = uniform(&mut rng, &[n, 1, h, w], -3.0, 3.0);
            let t: Vec<f64> = (0..numel)
                .map(|i| match NEAR.get(i) {
                    Some(&t) => t,
                    None => loop {
                        let t: f64 = rng.random_range(-3.0..3.0);
                        if (t.abs() - 1.0).abs() > 0.01 {
                            break t;
                        }
                    },
                })
                .collect();
            let target = Tensor::from_fn([n, 1, h, w], |i| pred.data()[i] - t[i]);
            let mut mask: Vec<bool> = (0..numel).map(|i| i < NEAR.len() || rng.random_bool(0.8)).collect();
            mask[numel - 1] = false;
            Case::new(vec![pred], move |g, v| g.huber_loss(v[0], &target, &mask))
        }
        "composed" => {
            let (cin, cout) = (rng.random_range(1..=2), rng.random_range(1..=3));
            let spec = ConvSpec::same(cin, cout, 3, 1);
            let x = uniform(&mut rng, &[n, cin, h, w], -1.0, 1.0);
            let wt = uniform(&mut rng, &spec.weight_shape(), -1.0, 1.0);
            let b = uniform(&mut rng, &[cout], -0.5, 0.5);
            Case::new(vec![x, wt, b], move |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), &spec)?;
                let y = g.elu(y, 1.0)?;
                g.maxpool2d(y, 2, 2)
            })
        }
        other => return Err(Error::Usage(format!("no gradient suite named {other:?}; known: {}", OPS.join(", ")))),
    })
}

/// Run `seeds` random cases of `op`.
pub fn check_op(op: &str, seeds: u64) -> Result<OpReport> {
    check_op_with(op, seeds, None)
}

/// [`check_op`] with conv2d weight gradients scaled by `perturb` in the
/// analytic pass. Only suites containing a conv2d are affected.
pub fn check_op_with(op: &str, seeds: u64, perturb: Option<f64>) -> Result<OpReport> {
    let name = OPS
        .iter()
        .copied()
        .find(|&o| o == op)
        .ok_or_else(|| Error::Usage(format!("no gradient suite named {op:?}; known: {}", OPS.join(", "))))?;
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        worst = worst.max(case(op, seed)?.max_rel_error(seed, perturb)?);
    }
    Ok(OpReport { op: name, seeds, max_rel_error: worst, tolerance: TOLERANCE })
}

/// `scope` is an op name or `"all"`.
pub fn run(scope: &str, seeds: u64, perturb: Option<f64>) -> Result<Vec<OpReport>> {
    if scope == "all" {
        OPS.iter().map(|op| check_op_with(op, seeds, perturb)).collect()
    } else {
        Ok(vec![check_op_with(scope, seeds, perturb)?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_op_is_usage_error() {
        assert!(matches!(check_op("softmax", 1), Err(Error::Usage(_))));
    }

    #[test]
    fn cases_are_deterministic() {
        let a = case("warp_horizontal", 3).unwrap();
        let b = case("warp_horizontal", 3).unwrap();
        assert_eq!(a.inputs, b.inputs);
    }
}
