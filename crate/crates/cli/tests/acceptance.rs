//! Acceptance run. Prints one `criterion N: PASS|FAIL` line per criterion and
//! exits nonzero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 3 5`.

#[path = "../../core/tests/support/oracles.rs"]
#[allow(dead_code)]
mod reference;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Output};
use std::time::{Duration, Instant};

use disco_core::blocks::{feature_reconstruction_error, schedule_receptive_field};
use disco_core::data::pfm::{decode_pfm, encode_pfm};
use disco_core::data::{generate_rds, write_dataset, Batch, Layout, RdsConfig, StereoSample};
use disco_core::model::{Model, ModelConfig, DECODER_SCALES};
use disco_core::train::{disparity_to_depth, epe, three_pixel_error, CameraParams};
use disco_core::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn disco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_disco")).args(args).output().expect("spawn disco")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path_arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Value of `key=` in a `key=value` log line.
fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split_whitespace().find_map(|t| t.strip_prefix(key)?.strip_prefix('='))
}

/// Tiny model used by every training experiment.
const TINY_MODEL: &str = "\
model.base_width = 16
model.growth = 8
model.max_disparity = 16
model.res_blocks_half = 2
model.res_blocks_quarter = 4
";

fn gradient_suite() -> Verdict {
    let t0 = Instant::now();
    let out = disco(&["gradcheck", "--scope", "all", "--seeds", "20"]);
    let elapsed = t0.elapsed();
    let text = stdout(&out);
    let required = [
        "conv2d",
        "deconv2d",
        "elu",
        "maxpool2d",
        "upsample_bilinear",
        "concat",
        "correlation",
        "warp_horizontal",
        "huber_loss",
    ];
    let mut worst = 0.0f64;
    let mut missing = Vec::new();
    for op in required {
        let row = text.lines().find(|l| l.split_whitespace().next() == Some(op));
        match row.map(|l| l.split_whitespace().collect::<Vec<_>>()) {
            Some(cols) if cols.len() >= 5 => {
                let seeds: u64 = cols[1].parse().unwrap_or(0);
                let err: f64 = cols[2].parse().unwrap_or(f64::INFINITY);
                worst = worst.max(if seeds >= 20 { err } else { f64::INFINITY });
            }
            _ => missing.push(op),
        }
    }
    let mutated = disco(&["gradcheck", "--scope", "conv2d", "--seeds", "3", "--perturb", "1.01"]);
    let caught = mutated.status.code() == Some(4);
    let pass = out.status.success() && missing.is_empty() && worst <= 1e-4 && elapsed <= Duration::from_secs(120) && caught;
    verdict(
        pass,
        format!(
            "max rel error {worst:.2e} (<= 1e-4) over 20 seeds, {:.0}s (<= 120s), missing {missing:?}, perturbed conv gradient caught: {caught}",
            elapsed.as_secs_f64()
        ),
    )
}

fn oracle_equivalence() -> Verdict {
    let t0 = Instant::now();
    let sweeps = [
        ("conv2d", reference::conv2d_sweep()),
        ("deconv2d", reference::deconv2d_sweep()),
        ("maxpool2d", reference::maxpool2d_sweep()),
        ("correlation", reference::correlation_sweep()),
    ];
    let elapsed = t0.elapsed();
    let worst = sweeps.iter().map(|(_, s)| s.worst).fold(0.0, f64::max);
    let cases: usize = sweeps.iter().map(|(_, s)| s.cases).sum();
    let pass = worst <= reference::TOL && elapsed <= Duration::from_secs(120);
    verdict(pass, format!("{cases} cases, max abs diff {worst:.2e} (<= 1e-10), {:.0}s", elapsed.as_secs_f64()))
}

fn receptive_fields() -> Verdict {
    let out = disco(&["rf"]);
    let text = stdout(&out);
    let per_layer = text.contains("d=1:3 d=3:7 d=6:13 d=8:17");
    let encoder = text.matches("stacked rf 37").count() == 3;
    let lgcf = text.contains("stacked rf 129") && text.contains("126");
    let single = schedule_receptive_field(3, &[1]) == 3;
    verdict(
        out.status.success() && per_layer && encoder && lgcf && single,
        format!("per-layer 3/7/13/17: {per_layer}, encoder stacked 37: {encoder}, lgcf 129 with 126 noted: {lgcf}, [1] -> 3: {single}"),
    )
}

fn architecture_audit() -> Verdict {
    let cfg = ModelConfig::tiny();
    let model = Model::<f32>::new(cfg.clone()).expect("model");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut img = || Tensor::<f32>::from_fn([1, 1, 64, 128], |_| rng.random());
    let (l, r) = (img(), img());
    let p = model.predict(&l, &r).expect("forward");
    let min_ok = p.audit.estimation_min == (64 / 16, 128 / 16);
    let sizes: Vec<(usize, usize)> = p.disparities.iter().map(|d| (d.shape()[2], d.shape()[3])).collect();
    let scales_ok = sizes == DECODER_SCALES.map(|s| (64 / s, 128 / s)).to_vec();
    let cost_ok = p.cost_volume.shape() == [1, cfg.max_disparity, 16, 32];
    let plain = Model::<f32>::new(ModelConfig { use_dilations: false, ..cfg.clone() }).expect("model");
    let same_params = plain.parameter_count() == model.parameter_count() && plain.params.check_layout(&model.params).is_ok();
    verdict(
        min_ok && scales_ok && cost_ok && same_params,
        format!(
            "min scale {:?} (want (4, 8)), decoder sizes {sizes:?}, cost volume {:?}, dilation switch keeps {} params: {same_params}",
            p.audit.estimation_min,
            p.cost_volume.shape(),
            model.parameter_count()
        ),
    )
}

/// Zero-mean, unit-norm 3x3 patches of raw intensity, one channel per tap.
fn patch_features(img: &Tensor<f64>) -> Tensor<f64> {
    let [_, _, h, w] = [img.shape()[0], img.shape()[1], img.shape()[2], img.shape()[3]];
    let at = |y: isize, x: isize| img.data()[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut out = Tensor::zeros([1, 9, h, w]);
    for y in 0..h {
        for x in 0..w {
            let taps: Vec<f64> = (0..9).map(|k| at(y as isize + k / 3 - 1, x as isize + k % 3 - 1)).collect();
            let mean = taps.iter().sum::<f64>() / 9.0;
            let norm = taps.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
            for (k, v) in taps.iter().enumerate() {
                out.data_mut()[(k * h + y) * w + x] = if norm > 0.0 { (v - mean) / norm } else { 0.0 };
            }
        }
    }
    out
}

fn geometric_consistency() -> Verdict {
    let mut worst = 0.0f64;
    let (mut hits, mut total) = (0usize, 0usize);
    for seed in 0..100 {
        let rds = RdsConfig { layout: Layout::Layered { layers: 3 }, seed, ..RdsConfig::default() };
        let s = generate_rds::<f64>(&rds).expect("rds");
        let b = Batch::from_samples(std::slice::from_ref(&s)).expect("batch");
        let mut g = Graph::new();
        let (l, r, d) = (g.constant(b.left.clone()), g.constant(b.right.clone()), g.constant(b.gt.clone()));
        let err = feature_reconstruction_error(&mut g, l, r, d).expect("warp");
        for (e, &v) in g.value(err).data().iter().zip(&s.valid) {
            if v {
                worst = worst.max(e.abs());
            }
        }

        let (lf, rf) = (g.constant(patch_features(&b.left)), g.constant(patch_features(&b.right)));
        let levels = rds.max_disparity;
        let cost = g.correlation(lf, rf, levels).expect("correlation");
        let (h, w) = (rds.height, rds.width);
        let c = g.value(cost).data();
        for i in (0..h * w).filter(|&i| s.valid[i]) {
            let best = (0..levels).max_by(|&a, &b| c[a * h * w + i].total_cmp(&c[b * h * w + i])).unwrap();
            hits += usize::from(best as f64 == s.gt.data()[i]);
            total += 1;
        }
    }
    let rate = 100.0 * hits as f64 / total as f64;
    verdict(
        worst <= 1e-6 && rate >= 95.0,
        format!("warp residual max {worst:.2e} (<= 1e-6), correlation argmax recovers {rate:.2}% (>= 95%) of {total} valid pixels"),
    )
}

/// Training log lines with the wall-clock field removed.
fn log_steps(dir: &Path) -> Vec<String> {
    fs::read_to_string(dir.join("train.log"))
        .unwrap_or_default()
        .lines()
        .filter(|l| l.starts_with("iter="))
        .map(|l| l.split_whitespace().filter(|t| !t.starts_with("time_ms=")).collect::<Vec<_>>().join(" "))
        .collect()
}

fn eval_epe(out: &Output) -> Option<(f64, f64)> {
    let text = stdout(out);
    let get = |k: &str| text.lines().find_map(|l| l.strip_prefix(k)?.trim().strip_prefix('=')?.trim().parse::<f64>().ok());
    Some((get("epe")?, get("three_pe")?))
}

fn overfit(tmp: &Path) -> Verdict {
    let samples: Vec<StereoSample<f32>> = (0..8)
        .map(|i| {
            let rds = RdsConfig { layout: Layout::Constant { disparity: 2 + 3 * i }, seed: 100 + i as u64, ..RdsConfig::default() };
            generate_rds(&rds).expect("rds")
        })
        .collect();
    let manifest = write_dataset(tmp.join("overfit_data"), &samples).expect("dataset");
    let config = |iters: u64| {
        format!(
            "run.seed = 7\nrun.log_every = 250\n{TINY_MODEL}optim.iterations = {iters}\noptim.batch_size = 2\noptim.lr = 2e-4\n\
             optim.decay_boundaries = 666, 1333\ndata.source = manifest\ndata.manifest = {m}\ndata.heldout.source = manifest\ndata.heldout.manifest = {m}\n",
            m = manifest.display()
        )
    };
    let cfg_path = tmp.join("overfit.cfg");
    fs::write(&cfg_path, config(2000)).unwrap();
    let out_dir = tmp.join("overfit_run");
    let t0 = Instant::now();
    let train = disco(&["train", "--config", path_arg(&cfg_path), "--out", path_arg(&out_dir)]);
    let elapsed = t0.elapsed();
    if !train.status.success() {
        return verdict(false, format!("train failed: {}", String::from_utf8_lossy(&train.stderr)));
    }
    let steps = log_steps(&out_dir);
    let loss = |l: &String| field(l, "loss").and_then(|v| v.parse::<f64>().ok()).unwrap_or(f64::NAN);
    let (first, last) = (loss(&steps[0]), loss(steps.last().unwrap()));
    let reduction = 100.0 * (1.0 - last / first);
    let eval = disco(&[
        "eval",
        "--checkpoint",
        path_arg(&out_dir.join("final.bin")),
        "--manifest",
        path_arg(&manifest),
    ]);
    let (train_epe, _) = eval_epe(&eval).unwrap_or((f64::INFINITY, f64::INFINITY));

    let short_cfg = tmp.join("overfit_short.cfg");
    fs::write(&short_cfg, config(20)).unwrap();
    let mut prefixes = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.join(format!("overfit_short_{run}"));
        disco(&["train", "--config", path_arg(&short_cfg), "--out", path_arg(&dir)]);
        prefixes.push(log_steps(&dir));
    }
    let deterministic = prefixes[0].len() == 20 && prefixes[0] == prefixes[1] && prefixes[0][..] == steps[..20];
    verdict(
        steps.len() == 2000 && train_epe < 1.0 && reduction >= 90.0 && deterministic && elapsed <= Duration::from_secs(900),
        format!(
            "training EPE {train_epe:.3} (< 1.0), loss {first:.3} -> {last:.4} ({reduction:.1}% >= 90%), deterministic: {deterministic}, {:.0}s (<= 900s)",
            elapsed.as_secs_f64()
        ),
    )
}

/// Iteration budget of the generalization runs.
const GENERALIZATION_ITERS: u64 = 4000;

/// 200 layered stereograms generated at 96x192, trained on random 64x128
/// crops with photometric jitter. The 32 held-out samples come from a
/// separately seeded stream and are center-cropped to the training size.
fn generalization_config(tmp: &Path, variant: &str) -> PathBuf {
    let text = format!(
        "run.seed = 11\nrun.log_every = 1000\n{TINY_MODEL}model.variant = {variant}\n\
         optim.iterations = {GENERALIZATION_ITERS}\noptim.batch_size = 2\noptim.lr = 2e-4\n\
         data.source = rds\ndata.samples = 200\ndata.rds.height = 96\ndata.rds.width = 192\n\
         data.rds.layout = layered:3\ndata.augment = true\ndata.augment.crop = 64, 128\n\
         data.heldout.source = rds\ndata.heldout.samples = 32\ndata.heldout.crop = 64, 128\n"
    );
    let path = tmp.join(format!("gen_{variant}.cfg"));
    fs::write(&path, text).unwrap();
    path
}

/// Train one variant and evaluate its final checkpoint on the held-out split.
fn generalization_run(tmp: &Path, variant: &str) -> Result<(f64, f64, Duration), String> {
    let cfg = generalization_config(tmp, variant);
    let dir = tmp.join(format!("gen_{variant}_run"));
    let t0 = Instant::now();
    let train = disco(&["train", "--config", path_arg(&cfg), "--out", path_arg(&dir)]);
    let elapsed = t0.elapsed();
    if !train.status.success() {
        return Err(format!("{variant} training failed: {}", String::from_utf8_lossy(&train.stderr)));
    }
    let eval = disco(&["eval", "--config", path_arg(&cfg), "--out", path_arg(&dir), "--checkpoint", path_arg(&dir.join("final.bin"))]);
    let (e, p) = eval_epe(&eval).ok_or_else(|| format!("{variant} eval failed: {}", String::from_utf8_lossy(&eval.stderr)))?;
    Ok((e, p, elapsed))
}

fn generalization(full: &Result<(f64, f64, Duration), String>) -> Verdict {
    match full {
        Ok((e, p, t)) => verdict(
            *e < 3.0 && *p < 25.0 && *t <= Duration::from_secs(3600),
            format!(
                "held-out EPE {e:.3} (< 3.0), 3PE {p:.2}% (< 25%) on 32 unseen samples after {GENERALIZATION_ITERS} iterations, {:.0}s (<= 3600s)",
                t.as_secs_f64()
            ),
        ),
        Err(m) => verdict(false, m.clone()),
    }
}

fn ablation(full: &Result<(f64, f64, Duration), String>, base: &Result<(f64, f64, Duration), String>) -> Verdict {
    match (full, base) {
        (Ok((f, ..)), Ok((b, ..))) => verdict(
            *f <= 1.1 * b,
            format!("EPE full {f:.3} vs baseline {b:.3} (full <= 1.1 x baseline = {:.3})", 1.1 * b),
        ),
        (Err(m), _) | (_, Err(m)) => verdict(false, m.clone()),
    }
}

fn metric_exactness() -> Verdict {
    let huber = |t: f64| {
        let mut g = Graph::new();
        let p = g.variable(Tensor::full([1], t));
        let l = g.huber_loss(p, &Tensor::full([1], 0.0), &[true]).unwrap();
        g.value(l).item()
    };
    let (h05, h4) = (huber(0.5), huber(4.0));
    let gt = vec![5.0f64; 100];
    let valid = vec![true; 100];
    let plus_one: Vec<f64> = gt.iter().map(|v| v + 1.0).collect();
    let e1 = epe(&plus_one, &gt, &valid).unwrap();
    let half_off: Vec<f64> = gt.iter().enumerate().map(|(i, v)| if i % 2 == 0 { v + 4.0 } else { *v }).collect();
    let p50 = three_pixel_error(&half_off, &gt, &valid).unwrap();
    let off3: Vec<f64> = gt.iter().map(|v| v + 3.0).collect();
    let p0 = three_pixel_error(&off3, &gt, &valid).unwrap();
    let (depth, mask) = disparity_to_depth(&Tensor::full([1, 1, 1], 50.0f64), CameraParams::new(1000.0, 0.05).unwrap());
    let z = depth.data()[0];
    let pass = h05 == 0.125 && h4 == 3.5 && e1 == 1.0 && p50 == 50.0 && p0 == 0.0 && (z - 1.0).abs() <= 1e-12 && mask[0];
    verdict(
        pass,
        format!("huber(0.5)={h05} huber(4)={h4} EPE(+1)={e1} 3PE(half +4)={p50}% 3PE(all +3)={p0}% depth={z} m"),
    )
}

fn io_exactness(tmp: &Path) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut mismatched = 0;
    for i in 0..1000 {
        let (h, w) = (rng.random_range(1..40), rng.random_range(1..40));
        let c = if rng.random_bool(0.25) { 3 } else { 1 };
        let mut t = Tensor::<f32>::from_fn([c, h, w], |_| f32::from_bits(rng.random::<u32>()));
        if i % 10 == 0 {
            t.data_mut()[0] = f32::INFINITY;
        }
        for scale in [-1.0f32, 1.0] {
            let (back, s) = decode_pfm(&encode_pfm(&t, scale).unwrap()).unwrap();
            let same = back.shape() == t.shape()
                && s == scale
                && back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            mismatched += usize::from(!same);
        }
    }

    let cfg = tmp.join("resume.cfg");
    fs::write(
        &cfg,
        format!(
            "run.seed = 5\nrun.checkpoint_every = 2\n{TINY_MODEL}optim.iterations = 4\n\
             data.source = rds\ndata.samples = 16\ndata.heldout.source = none\n"
        ),
    )
    .unwrap();
    let (a, b) = (tmp.join("resume_a"), tmp.join("resume_b"));
    let ra = disco(&["train", "--config", path_arg(&cfg), "--out", path_arg(&a)]);
    let rb = disco(&[
        "train",
        "--config",
        path_arg(&cfg),
        "--out",
        path_arg(&b),
        "--resume",
        path_arg(&a.join("ckpt_000002.bin")),
    ]);
    let resumed = ra.status.success()
        && rb.status.success()
        && fs::read(a.join("final.bin")).ok().is_some_and(|x| Some(x) == fs::read(b.join("final.bin")).ok())
        && log_steps(&a)[2..] == log_steps(&b)[..];
    verdict(
        mismatched == 0 && resumed,
        format!("PFM: {mismatched} of 2000 encodings differ; resumed run bitwise equal to uninterrupted: {resumed}"),
    )
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: u32| selected.is_empty() || selected.contains(&n);
    let tmp = tempfile::tempdir().expect("temp dir");
    let tmp = tmp.path();

    let mut results: Vec<(u32, Verdict, Duration)> = Vec::new();
    let mut run = |n: u32, f: &mut dyn FnMut() -> Verdict| {
        if want(n) {
            let t0 = Instant::now();
            let v = f();
            let line = format!("criterion {n}: {} {} [{:.1}s]", if v.pass { "PASS" } else { "FAIL" }, v.detail, t0.elapsed().as_secs_f64());
            println!("{line}");
            results.push((n, v, t0.elapsed()));
        }
    };
    run(1, &mut gradient_suite);
    run(2, &mut oracle_equivalence);
    run(3, &mut receptive_fields);
    run(4, &mut architecture_audit);
    run(5, &mut geometric_consistency);
    run(6, &mut || overfit(tmp));
    run(9, &mut metric_exactness);
    run(10, &mut || io_exactness(tmp));
    if want(7) || want(8) {
        let full = generalization_run(tmp, "full");
        let base = if want(8) { generalization_run(tmp, "baseline") } else { Err("not run".into()) };
        run(7, &mut || generalization(&full));
        run(8, &mut || ablation(&full, &base));
    }

    let failed: Vec<u32> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
