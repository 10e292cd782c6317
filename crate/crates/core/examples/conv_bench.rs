//! Rough forward/backward timing for the convolution shapes the model uses.

use std::time::Instant;

use disco_core::autodiff::ConvSpec;
use disco_core::{Graph, Tensor};

fn bench(n: usize, cin: usize, cout: usize, h: usize, w: usize, spec: ConvSpec, reps: usize) {
    let x = Tensor::<f32>::from_fn([n, cin, h, w], |i| ((i * 7919) % 113) as f32 / 113.0);
    let wt = Tensor::<f32>::from_fn(spec.weight_shape(), |i| ((i * 31) % 17) as f32 / 170.0);
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut g = Graph::new();
        let xv = g.variable(x.clone());
        let wv = g.variable(wt.clone());
        let y = g.conv2d(xv, wv, None, &spec).unwrap();
        let l = g.sum(y).unwrap();
        g.backward(l).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    let [_, _, oh, ow] = [0, 0, spec.output_len(h).unwrap(), spec.output_len(w).unwrap()];
    let macs = (n * oh * ow * cout * cin * spec.kernel * spec.kernel) as f64;
    println!(
        "n={n} {cin}->{cout} {h}x{w} k={} d={} s={}: {:.2} ms fwd+bwd, {:.1} GFLOP/s",
        spec.kernel,
        spec.dilation,
        spec.stride,
        dt * 1e3,
        3.0 * 2.0 * macs / dt / 1e9
    );
}

fn main() {
    bench(4, 16, 16, 32, 64, ConvSpec::same(16, 16, 3, 1), 20);
    bench(4, 32, 32, 16, 32, ConvSpec::same(32, 32, 3, 1), 20);
    bench(4, 1, 16, 64, 128, ConvSpec::strided(1, 16, 3, 2), 20);
    bench(4, 56, 8, 16, 32, ConvSpec::same(56, 8, 3, 6), 20);
    bench(4, 240, 32, 16, 32, ConvSpec::pointwise(240, 32), 20);
    bench(4, 18, 8, 64, 128, ConvSpec::same(18, 8, 3, 1), 10);
}
