use disco_core::blocks::{feature_reconstruction_error, schedule_receptive_field};
use disco_core::data::{generate_rds, Batch, Layout, RdsConfig};
use disco_core::model::{
    build_cost_volume, feature_extract, forward, residual_block, Model, ModelConfig, Variant, DECODER_SCALES,
};
use disco_core::params::{Ctx, ParamStore};
use disco_core::{ErrorKind, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> ModelConfig {
    ModelConfig {
        res_blocks_half: 1,
        res_blocks_quarter: 2,
        base_width: 8,
        feature_width: 16,
        growth: 4,
        encoder_widths: vec![16, 16, 24],
        decoder_widths: vec![24, 16, 16, 8, 8],
        fusion_width: 16,
        refine_widths: vec![8, 16, 16],
        max_disparity: 8,
        ..ModelConfig::default()
    }
}

fn image(seed: u64, h: usize, w: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([1, 1, h, w], |_| rng.random_range(0.0..1.0))
}

#[test]
fn siamese_views_share_weights() {
    let model = Model::<f64>::new(small()).unwrap();
    let (a, b) = (image(1, 32, 64), image(2, 32, 64));
    let run = |l: &Tensor<f64>, r: &Tensor<f64>| {
        let mut g = Graph::new();
        let (lv, rv) = (g.constant(l.clone()), g.constant(r.clone()));
        let mut ctx = Ctx::bind(&mut g, &model.params, false);
        let (_, lq, rq) = feature_extract(&mut ctx, &model.config, lv, rv).unwrap();
        (g.value(lq).clone(), g.value(rq).clone())
    };
    let (ab_l, ab_r) = run(&a, &b);
    let (ba_l, ba_r) = run(&b, &a);
    assert_eq!(ab_l, ba_r);
    assert_eq!(ab_r, ba_l);
    assert_eq!(ab_l.shape(), &[1, 16, 8, 16]);
}

#[test]
fn zero_residual_branch_is_identity() {
    let mut store = ParamStore::new();
    store.insert("blk.conv1.weight", Tensor::from_fn([4, 4, 3, 3], |i| (i as f64 * 0.37).sin()));
    store.insert("blk.conv1.bias", Tensor::full([4], 0.1));
    store.insert("blk.conv2.weight", Tensor::zeros([4, 4, 3, 3]));
    store.insert("blk.conv2.bias", Tensor::zeros([4]));
    let x = Tensor::from_fn([2, 4, 6, 5], |i| (i as f64 * 0.91).cos());
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let mut ctx = Ctx::bind(&mut g, &store, false);
    let y = residual_block(&mut ctx, "blk", xv, 4, 1).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn zero_refinement_passes_disparity_through() {
    let mut model = Model::<f64>::new(small()).unwrap();
    let names: Vec<String> = model.params.names().filter(|n| n.starts_with("refine.")).cloned().collect();
    assert!(!names.is_empty());
    for n in names {
        model.params.get_mut(&n).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let p = model.predict(&image(3, 32, 64), &image(4, 32, 64)).unwrap();
    assert_eq!(p.refined.as_ref().unwrap(), p.disparities.last().unwrap());
}

#[test]
fn forward_is_deterministic() {
    let a = Model::<f32>::new(small()).unwrap();
    let b = Model::<f32>::new(small()).unwrap();
    assert_eq!(a, b);
    let (l, r) = (image(5, 32, 64).cast::<f32>(), image(6, 32, 64).cast::<f32>());
    let p = a.predict(&l, &r).unwrap();
    let q = b.predict(&l, &r).unwrap();
    assert_eq!(p.disparities, q.disparities);
    assert_eq!(p.refined, q.refined);
    let other = Model::<f32>::new(ModelConfig { seed: 1, ..small() }).unwrap();
    assert_ne!(a.params, other.params);
}

#[test]
fn decoder_scales_and_finiteness() {
    let model = Model::<f32>::new(small()).unwrap();
    let p = model.predict(&image(7, 64, 128).cast(), &image(8, 64, 128).cast()).unwrap();
    let sizes: Vec<_> = p.disparities.iter().map(|d| (d.shape()[2], d.shape()[3])).collect();
    assert_eq!(sizes, DECODER_SCALES.map(|s| (64 / s, 128 / s)).to_vec());
    for d in p.disparities.iter().chain(p.refined.iter()) {
        assert_eq!(d.shape()[1], 1);
        assert!(d.all_finite());
    }
    assert_eq!(p.audit.estimation_min, (4, 8));
    assert_eq!(p.cost_volume.shape(), &[1, 8, 16, 32]);
}

#[test]
fn ablation_parameter_counts_are_monotone() {
    let counts: Vec<usize> = Variant::ALL
        .iter()
        .map(|&v| Model::<f32>::new(small().with_variant(v)).unwrap().parameter_count())
        .collect();
    assert_eq!(counts[0], counts[1], "dilations must not add parameters");
    assert!(counts[1] < counts[2] && counts[2] < counts[3], "{counts:?}");

    let plain = Model::<f32>::new(small().with_variant(Variant::Baseline)).unwrap();
    let dilated = Model::<f32>::new(small().with_variant(Variant::Dilations)).unwrap();
    plain.params.check_layout(&dilated.params).unwrap();
    let stage = small().with_variant(Variant::Baseline).encoder_schedule(0);
    assert_eq!(schedule_receptive_field(3, &stage), 9);
    assert_eq!(schedule_receptive_field(3, &small().encoder_schedule(0)), 37);
}

#[test]
fn context_switch_keeps_cost_input_shape() {
    let shapes: Vec<Vec<usize>> = [true, false]
        .iter()
        .map(|&use_lgcf| {
            let cfg = ModelConfig { use_lgcf, ..small() };
            let model = Model::<f64>::new(cfg.clone()).unwrap();
            let mut g = Graph::new();
            let (l, r) = (g.constant(image(9, 32, 64)), g.constant(image(10, 32, 64)));
            let mut ctx = Ctx::bind(&mut g, &model.params, false);
            let (_, lq, rq) = feature_extract(&mut ctx, &cfg, l, r).unwrap();
            let (cost, input) = build_cost_volume(&mut ctx, &cfg, lq, rq).unwrap();
            assert_eq!(g.shape(cost), &[1, 8, 8, 16]);
            g.shape(input).to_vec()
        })
        .collect();
    assert_eq!(shapes[0], shapes[1]);
    assert_eq!(shapes[0], vec![1, 8 + 16, 8, 16]);
}

#[test]
fn errors_name_the_subnetwork() {
    let model = Model::<f32>::new(small()).unwrap();
    let bad = Tensor::<f32>::zeros([1, 1, 30, 64]);
    let e = model.predict(&bad, &bad).unwrap_err();
    assert_eq!(e.kind(), ErrorKind::Config);
    assert!(e.to_string().contains("feature extraction") && e.to_string().contains("pad"), "{e}");

    let rgb = Tensor::<f32>::zeros([1, 3, 32, 64]);
    assert!(model.predict(&rgb, &rgb).is_err());
}

#[test]
fn perfect_disparity_reconstructs_left_view() {
    for seed in 0..10 {
        let cfg = RdsConfig { layout: Layout::Layered { layers: 3 }, ..RdsConfig::default() }.with_seed(seed);
        let s = generate_rds::<f64>(&cfg).unwrap();
        let b = Batch::from_samples(std::slice::from_ref(&s)).unwrap();
        let mut g = Graph::new();
        let (l, r, d) = (g.constant(b.left), g.constant(b.right), g.constant(b.gt));
        let err = feature_reconstruction_error(&mut g, l, r, d).unwrap();
        let worst = g
            .value(err)
            .data()
            .iter()
            .zip(&s.valid)
            .filter(|(_, &v)| v)
            .fold(0.0f64, |m, (e, _)| m.max(e.abs()));
        assert!(worst <= 1e-6, "seed {seed}: {worst:e}");
    }
}

#[test]
fn training_graph_binds_every_parameter() {
    let model = Model::<f64>::new(small()).unwrap();
    let mut g = Graph::new();
    let (l, r) = (g.constant(image(11, 32, 64)), g.constant(image(12, 32, 64)));
    let mut ctx = Ctx::bind(&mut g, &model.params, true);
    forward(&mut ctx, &model.config, l, r).unwrap();
    assert_eq!(ctx.bound().len(), model.params.len());
}
