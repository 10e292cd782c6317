use std::time::Instant;

use disco_core::model::{forward, Model, ModelConfig, Variant};
use disco_core::params::Ctx;
use disco_core::{Graph, Tensor};

fn main() {
    for variant in [Variant::Baseline, Variant::Full] {
        let cfg = ModelConfig::tiny().with_variant(variant);
        let model = Model::<f32>::new(cfg.clone()).unwrap();
        println!("{}: {} params", variant.name(), model.parameter_count());
        let batch = 2;
        let x = Tensor::from_fn([batch, 1, 64, 128], |i| ((i * 2654435761) % 997) as f32 / 997.0);
        for _ in 0..3 {
            let t = Instant::now();
            let mut g = Graph::new();
            let (l, r) = (g.constant(x.clone()), g.constant(x.clone()));
            let mut ctx = Ctx::bind(&mut g, &model.params, true);
            let out = forward(&mut ctx, &cfg, l, r).unwrap();
            let loss = g.mean(out.final_disparity()).unwrap();
            let tf = t.elapsed();
            let _grads = g.backward(loss).unwrap();
            println!("  fwd {:?} total {:?} timing {:?} audit {:?}", tf, t.elapsed(), out.timing, out.audit);
        }
    }
}
