//! Acceptance criteria, one PASS/FAIL line each. A subset runs with
//! `cargo test --test acceptance -- 6 7`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use plantsplat::image::Image;
use plantsplat::io::synth::{capture_dataset, synth_train_config};
use plantsplat::metrics::{lpips_from_features, psnr, ssim, FeatureLayer, FeatureStack, TraitSeries};
use plantsplat::optim::{backward, densify_and_prune, evaluate_view, fit, photometric_loss, DensifyParams, EvalTarget, TrainMode};
use plantsplat::phenotype::{dbscan, extract_points, extract_traits, extract_traits_from_scene, TraitConfig, NOISE};
use plantsplat::render::{render, render_reference, RasterOptions};
use plantsplat::scene::{family_of, CameraView, GaussianScene, GaussianSplat, ParamFamily};
use plantsplat::synth::random::{random_camera, random_scene};
use plantsplat::synth::{generate_dataset, generate_scene, SynthSpec};
use plantsplat_cli::{run, Cli};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn cli(args: &[&str]) -> plantsplat::Result<plantsplat_cli::ArtifactManifest> {
    let cli = <Cli as clap::Parser>::try_parse_from(std::iter::once("plantsplat").chain(args.iter().copied()))
        .expect("arguments parse");
    run(&cli)
}

fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> Image {
    let data = (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    Image::from_vec(w, h, 3, data).unwrap()
}

fn max_abs_diff(a: &Image, b: &Image) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn renderer_matches_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let n = rng.random_range(1..=50);
        let degree = rng.random_range(0..=3);
        let scene = random_scene(&mut rng, n, degree, 0.5);
        let cam = random_camera(&mut rng, 32, 32, 3.0);
        let bg = [rng.random(), rng.random(), rng.random()];
        let tiled = render(&scene, &cam, bg, &RasterOptions::exact()).unwrap();
        let oracle = render_reference(&scene, &cam, bg, degree, RasterOptions::default().near, 50).unwrap();
        worst = worst.max(max_abs_diff(&tiled.rgb, &oracle.rgb)).max(max_abs_diff(&tiled.alpha_acc, &oracle.alpha_acc));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst < 1e-5 && secs < 10.0, format!("max abs error {worst:.2e} over 25 scenes in {secs:.1} s"))
}

fn loss_at(scene: &GaussianScene, cam: &CameraView, target: &Image, mask: Option<&Image>, bg: [f64; 3]) -> f64 {
    let out = render(scene, cam, bg, &RasterOptions::exact()).unwrap();
    photometric_loss(target, mask, &out.rgb, 0.2, false).unwrap().0.total
}

fn half_mask(w: usize, h: usize, split: usize) -> Image {
    let data = (0..w * h).map(|i| if i % w < split { 1.0 } else { 0.0 }).collect();
    Image::from_vec(w, h, 1, data).unwrap()
}

fn gradients_match_finite_differences() -> Outcome {
    let start = Instant::now();
    let h = 1e-4;
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_scene(&mut rng, 5, 1, 0.4);
        let cam = random_camera(&mut rng, 16, 16, 3.0);
        let target = random_image(&mut rng, 16, 16);
        let bg = [rng.random(), rng.random(), rng.random()];
        let mask = (seed % 2 == 1).then(|| half_mask(16, 16, 10));
        let (_, grads) = backward(&scene, &cam, &target, mask.as_ref(), 0.2, bg, &RasterOptions::exact(), 0).unwrap();
        let base = scene.flat_params();
        let stride = scene.param_stride();
        let fd: Vec<f64> = (0..base.len())
            .map(|j| {
                let shifted = |d: f64| {
                    let mut p = base.clone();
                    p[j] += d;
                    let mut s = scene.clone();
                    s.set_flat_params(&p);
                    loss_at(&s, &cam, &target, mask.as_ref(), bg)
                };
                (shifted(h) - shifted(-h)) / (2.0 * h)
            })
            .collect();
        for fam in ParamFamily::ALL {
            let idx: Vec<usize> = (0..base.len()).filter(|j| family_of(j % stride) == fam).collect();
            // Partials far below the family's largest are compared against that scale.
            let scale = idx.iter().map(|&j| fd[j].abs()).fold(0.0, f64::max);
            let err = idx
                .iter()
                .map(|&j| (grads.params[j] - fd[j]).abs() / fd[j].abs().max(1e-2 * scale).max(1e-9))
                .fold(0.0, f64::max);
            let e = worst.entry(format!("{fam:?}")).or_default();
            *e = e.max(err);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let max = worst.values().copied().fold(0.0, f64::max);
    let per: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    outcome(max < 1e-3 && secs < 60.0, format!("20 cases, worst relative error {} in {secs:.1} s", per.join(", ")))
}

fn masked_pixels_give_no_gradient() -> Outcome {
    let cam = CameraView::new(16.0, 16.0, 8.0, 8.0, 16, 16, Matrix3::identity(), Vector3::zeros()).unwrap();
    let mask = half_mask(16, 16, 8);
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let z = rng.random_range(1.8..2.4);
        let mut splats: Vec<GaussianSplat> = (0..4)
            .map(|_| {
                let (u, v) = (rng.random_range(1.0..7.0), rng.random_range(1.0..15.0));
                let mut s = GaussianSplat::isotropic([(u - 8.0) / 16.0 * z, (v - 8.0) / 16.0 * z, z], 0.08, 0.7, [rng.random(), rng.random(), rng.random()], 1);
                s.rotation = [rng.random_range(0.5..1.0), rng.random(), rng.random(), rng.random()];
                s
            })
            .collect();
        // Sits entirely over the unmasked right half, in front of everything.
        let (u, v) = (rng.random_range(12.0..13.5), rng.random_range(3.0..13.0));
        let hz = z - 0.5;
        let mut hidden = GaussianSplat::isotropic([(u - 8.0) / 16.0 * hz, (v - 8.0) / 16.0 * hz, hz], 0.02, 0.9, [0.9, 0.2, 0.1], 1);
        hidden.sh[2] = [0.1, -0.2, 0.05];
        splats.push(hidden.clone());
        let scene = GaussianScene::from_splats(1, splats).unwrap();
        let alone = render(&GaussianScene::from_splats(1, vec![hidden]).unwrap(), &cam, [0.0; 3], &RasterOptions::exact()).unwrap();
        let covers_mask = (0..256).any(|i| alone.alpha_acc.data()[i] > 0.0 && mask.data()[i] == 1.0);
        let covers_something = alone.alpha_acc.data().iter().any(|&a| a > 1e-3);
        if covers_mask || !covers_something {
            return outcome(false, format!("seed {seed}: construction does not isolate the splat"));
        }
        let target = random_image(&mut rng, 16, 16);
        let bg = [rng.random(), rng.random(), rng.random()];
        let (_, grads) = backward(&scene, &cam, &target, Some(&mask), 0.2, bg, &RasterOptions::exact(), 0).unwrap();
        let stride = scene.param_stride();
        let g = &grads.params[4 * stride..5 * stride];
        if let Some(j) = g.iter().position(|&x| x != 0.0) {
            return outcome(false, format!("seed {seed}: {:?} gradient {:e}", family_of(j), g[j]));
        }
        let others_move = grads.params[..4 * stride].iter().any(|&x| x != 0.0);
        if !others_move {
            return outcome(false, format!("seed {seed}: visible splats got no gradient either"));
        }
        checked += stride;
    }
    outcome(true, format!("{checked} parameters of isolated splats exactly zero over 20 scenes"))
}

fn empty_pixels_show_background() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut empty = 0usize;
    for i in 0..100 {
        let n = rng.random_range(1..=30);
        let degree = rng.random_range(0..=2);
        let scene = random_scene(&mut rng, n, degree, 0.5);
        let cam = random_camera(&mut rng, 24, 24, 3.0);
        let bg = [rng.random(), rng.random(), rng.random()];
        let options = if i % 2 == 0 { RasterOptions::default() } else { RasterOptions::exact() };
        let out = render(&scene, &cam, bg, &options).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                if out.alpha_acc.get(x, y, 0) == 0.0 {
                    empty += 1;
                    if (0..3).any(|c| out.rgb.get(x, y, c).to_bits() != bg[c].to_bits()) {
                        return outcome(false, format!("render {i} pixel ({x}, {y}) differs from the background"));
                    }
                }
            }
        }
    }
    outcome(empty > 0, format!("{empty} zero-alpha pixels over 100 renders equal the background bit for bit"))
}

fn pruning_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut pruned, mut added) = (0, 0);
    for state in 0..50 {
        let n = rng.random_range(5..60);
        let degree = rng.random_range(0..=1);
        let mut scene = random_scene(&mut rng, n, degree, 1.0);
        for i in 0..n {
            if rng.random_bool(0.3) {
                scene.splats[i].opacity_logit = rng.random_range(-6.0..-2.0);
            }
            scene.stats.observations[i] = rng.random_range(0..5);
            scene.stats.grad_accum[i] = rng.random_range(0.0..1e-3) * scene.stats.observations[i] as f64;
        }
        let params = DensifyParams {
            grad_threshold: rng.random_range(1e-5..5e-4),
            prune_opacity: 0.1,
            split_scale: rng.random_range(0.05..0.3),
            max_scale: f64::INFINITY,
            max_splats: rng.random_range(n..4 * n),
        };
        let r = densify_and_prune(&mut scene, &params, &mut rng);
        pruned += r.pruned;
        added += r.cloned + r.split;
        if let Some(s) = scene.splats.iter().find(|s| s.opacity() < 0.1) {
            return outcome(false, format!("state {state}: survivor with opacity {}", s.opacity()));
        }
    }
    outcome(pruned > 0 && added > 0, format!("50 states, {pruned} pruned, {added} added, all survivors at opacity >= 0.1"))
}

fn mean_score(scores: &[(f64, f64)]) -> (f64, f64) {
    let n = scores.len() as f64;
    (scores.iter().map(|s| s.0).sum::<f64>() / n, scores.iter().map(|s| s.1).sum::<f64>() / n)
}

fn synthetic_convergence() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run_dir = dir.path().join("run");
    let eval_dir = dir.path().join("eval");
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    cli(&["synth", "--out", &s(&data)]).unwrap();
    let manifest = s(&data.join("manifest.json"));
    cli(&[
        "--config",
        &s(&data.join("train.toml")),
        "--mode",
        "object-centric",
        "train",
        "--manifest",
        &manifest,
        "--out",
        &s(&run_dir),
        "--iterations",
        "2000",
    ])
    .unwrap();
    cli(&["eval", "--checkpoint", &s(&run_dir.join("checkpoint")), "--manifest", &manifest, "--out", &s(&eval_dir)]).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let metrics: toml::Table = toml::from_str(&std::fs::read_to_string(eval_dir.join("metrics.toml")).unwrap()).unwrap();
    let (p, q) = (metrics["psnr"].as_float().unwrap(), metrics["ssim"].as_float().unwrap());
    let views = metrics["views"].as_integer().unwrap();
    outcome(
        p >= 30.0 && q >= 0.95 && secs < 600.0,
        format!("{views} held-out views: PSNR {p:.2} dB, SSIM {q:.4}, {secs:.0} s end to end"),
    )
}

fn object_centric_efficiency() -> Outcome {
    let spec = SynthSpec {
        clutter: 400,
        environment_radius_cm: 120.0,
        ..Default::default()
    };
    let capture = generate_dataset(&spec).unwrap();
    let ds = capture_dataset(&capture).unwrap();
    let mut results = Vec::new();
    for mode in [TrainMode::ObjectCentric, TrainMode::Baseline] {
        let r = fit(&ds, synth_train_config(&spec, mode), &mut |_| {}).unwrap();
        let scores: Vec<(f64, f64)> = ds
            .test
            .iter()
            .map(|v| {
                let s = evaluate_view(&r.scene, v, ds.background, EvalTarget::MaskedBoth).unwrap().0;
                (s.psnr, s.ssim)
            })
            .collect();
        results.push((r.scene.len(), r.wall_time_s, mean_score(&scores).0));
    }
    let (oc, base) = (results[0], results[1]);
    let fewer = 1.0 - oc.0 as f64 / base.0 as f64;
    let splats_ok = fewer >= 0.3;
    let time_ok = oc.1 <= base.1;
    let psnr_ok = oc.2 >= base.2;
    outcome(
        splats_ok && time_ok && psnr_ok,
        format!(
            "splats {} vs {} ({:.0}% fewer, {}), time {:.0} s vs {:.0} s ({}), masked PSNR {:.2} vs {:.2} dB ({})",
            oc.0,
            base.0,
            100.0 * fewer,
            if splats_ok { "ok" } else { "short" },
            oc.1,
            base.1,
            if time_ok { "ok" } else { "slower" },
            oc.2,
            base.2,
            if psnr_ok { "ok" } else { "below baseline" }
        ),
    )
}

fn random_plant(rng: &mut impl Rng, id: usize) -> SynthSpec {
    let width1 = rng.random_range(18.0..40.0);
    SynthSpec {
        plant_id: format!("plant_{id:02}"),
        height_cm: rng.random_range(12.0..35.0),
        width1_cm: width1,
        width2_cm: width1 * rng.random_range(0.55..1.0),
        canopy_yaw_deg: rng.random_range(0.0..180.0),
        position_noise_cm: 0.1,
        seed: id as u64,
        ..Default::default()
    }
}

fn trait_accuracy() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let config = TraitConfig::default();
    let mut truth: [Vec<f64>; 3] = Default::default();
    let mut est: [Vec<f64>; 3] = Default::default();
    for id in 0..10 {
        let spec = random_plant(&mut rng, id);
        let scene = generate_scene(&spec).unwrap();
        let r = match extract_traits_from_scene(&scene.scene, &config, None) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("{}: {e}", spec.plant_id)),
        };
        let o = spec.oracle();
        for (k, (t, e)) in [(o.height_cm, r.height_cm), (o.width1_cm, r.width1_cm), (o.width2_cm, r.width2_cm)].into_iter().enumerate() {
            truth[k].push(t);
            est[k].push(e);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let mut pass = secs < 120.0;
    let mut parts = Vec::new();
    for (k, name) in ["height", "width1", "width2"].iter().enumerate() {
        let s = TraitSeries::new(truth[k].clone(), est[k].clone()).unwrap();
        let (mape, r2) = (s.mape().unwrap(), s.r2().unwrap());
        pass &= mape < 2.0 && r2 > 0.99;
        parts.push(format!("{name} MAPE {mape:.2}% R2 {r2:.4} RMSE {:.2} cm", s.rmse()));
    }
    outcome(pass, format!("10 plants, 1 mm jitter: {} in {secs:.1} s", parts.join("; ")))
}

fn scale_covariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let config = TraitConfig::default();
    let mut worst: f64 = 0.0;
    for id in 0..3 {
        let spec = random_plant(&mut rng, 20 + id);
        let scene = generate_scene(&spec).unwrap();
        let points = extract_points(&scene.scene, config.opacity_min).unwrap();
        let base = extract_traits(&points, &config, None).unwrap();
        for k in [0.1, 1.0, 37.0] {
            let scaled: Vec<[f64; 3]> = points.iter().map(|p| p.map(|v| v * k)).collect();
            let r = extract_traits(&scaled, &config, None).unwrap();
            for (a, b) in [(base.height_cm, r.height_cm), (base.width1_cm, r.width1_cm), (base.width2_cm, r.width2_cm)] {
                worst = worst.max((a - b).abs() / a.abs());
            }
        }
    }
    outcome(worst < 1e-9, format!("3 plants x k in {{0.1, 1, 37}}: worst relative change {worst:.1e}"))
}

fn naive_lpips(a: &FeatureStack, b: &FeatureStack) -> f64 {
    let mut total = 0.0;
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        let mut sum = 0.0;
        for y in 0..la.height {
            for x in 0..la.width {
                for c in 0..la.channels {
                    let i = (y * la.width + x) * la.channels + c;
                    let d = la.weights[c] * (la.features[i] - lb.features[i]);
                    sum += d * d;
                }
            }
        }
        total += sum / (la.height * la.width) as f64;
    }
    total
}

fn random_stack_pair(rng: &mut impl Rng) -> (FeatureStack, FeatureStack) {
    let shapes: Vec<(usize, usize, usize)> =
        (0..rng.random_range(1..4)).map(|_| (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..8))).collect();
    let weights: Vec<Vec<f64>> = shapes.iter().map(|&(_, _, c)| (0..c).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
    let make = |rng: &mut dyn rand::RngCore| FeatureStack {
        layers: shapes
            .iter()
            .zip(&weights)
            .enumerate()
            .map(|(id, (&(h, w, c), wts))| {
                let mut features = Vec::with_capacity(h * w * c);
                for _ in 0..h * w {
                    let v: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0) + 1e-3).collect();
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    features.extend(v.iter().map(|x| x / n));
                }
                FeatureLayer { id: id as u32, height: h, width: w, channels: c, features, weights: wts.clone() }
            })
            .collect(),
    };
    (make(rng), make(rng))
}

fn metric_vectors() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, got: f64, want: f64, tol: f64| {
        let ok = if want.is_infinite() { got == want } else { (got - want).abs() <= tol };
        if !ok {
            failures.push(format!("{name}: {got} vs {want}"));
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let a = random_image(&mut rng, 8, 8);
    check("psnr a=b", psnr(&a, &a).unwrap(), f64::INFINITY, 0.0);
    let zero = Image::uniform(8, 8, &[0.0; 3]);
    check("psnr mse 0.01", psnr(&zero, &Image::uniform(8, 8, &[0.1; 3])).unwrap(), 20.0, 1e-12);
    check("psnr mse 0.001", psnr(&zero, &Image::uniform(8, 8, &[0.001f64.sqrt(); 3])).unwrap(), 30.0, 1e-12);
    check("ssim a=b", ssim(&a, &a).unwrap(), 1.0, 1e-12);
    let half = Image::uniform(16, 16, &[0.5; 3]);
    check("ssim constant 0.5", ssim(&half, &half).unwrap(), 1.0, 1e-12);
    let c1 = 0.01f64.powi(2);
    check(
        "ssim 0 vs 1",
        ssim(&Image::uniform(16, 16, &[0.0; 3]), &Image::uniform(16, 16, &[1.0; 3])).unwrap(),
        c1 / (1.0 + c1),
        1e-15,
    );
    let exact = TraitSeries::new(vec![10.0, 20.0, 30.0], vec![10.0, 20.0, 30.0]).unwrap();
    check("r2 exact", exact.r2().unwrap(), 1.0, 0.0);
    check("rmse exact", exact.rmse(), 0.0, 0.0);
    check("mape exact", exact.mape().unwrap(), 0.0, 0.0);
    check("mae exact", exact.mae(), 0.0, 0.0);
    check("acc exact", exact.accuracy().unwrap(), 100.0, 0.0);
    let s = TraitSeries::new(vec![10.0, 20.0, 30.0], vec![11.0, 19.0, 33.0]).unwrap();
    check("mae", s.mae(), 5.0 / 3.0, 1e-12);
    check("mape", s.mape().unwrap(), 25.0 / 3.0, 1e-12);
    check("acc", s.accuracy().unwrap(), 100.0 - 25.0 / 3.0, 1e-12);
    check("acc + mape", s.accuracy().unwrap() + s.mape().unwrap(), 100.0, 0.0);
    let mean = TraitSeries::new(vec![10.0, 20.0, 30.0], vec![20.0; 3]).unwrap();
    check("r2 mean", mean.r2().unwrap(), 0.0, 0.0);

    let unit = |v: [f64; 2]| FeatureStack {
        layers: vec![FeatureLayer { id: 0, height: 1, width: 1, channels: 2, features: v.to_vec(), weights: vec![1.0; 2] }],
    };
    // Unit feature vectors 60 degrees apart differ by a unit vector.
    check("lpips single term", lpips_from_features(&unit([1.0, 0.0]), &unit([0.5, 0.75f64.sqrt()])).unwrap(), 1.0, 1e-15);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (fa, fb) = random_stack_pair(&mut rng);
        check("lpips a=a", lpips_from_features(&fa, &fa).unwrap(), 0.0, 0.0);
        worst = worst.max((lpips_from_features(&fa, &fb).unwrap() - naive_lpips(&fa, &fb)).abs());
    }
    check("lpips vs naive", worst, 0.0, 1e-9);
    outcome(failures.is_empty(), if failures.is_empty() { format!("all fixtures hold, LPIPS oracle gap {worst:.1e}") } else { failures.join("; ") })
}

/// Density reachability by brute force: core points joined into components,
/// components numbered by their lowest core index, border points to the
/// lowest-numbered adjacent component.
fn naive_dbscan(points: &[[f64; 3]], eps: f64, min_pts: usize) -> Vec<i32> {
    let n = points.len();
    let near = |i: usize, j: usize| {
        let (a, b) = (points[i], points[j]);
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2) <= eps * eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut comp = vec![usize::MAX; n];
    let mut count = 0;
    for i in 0..n {
        if !core[i] || comp[i] != usize::MAX {
            continue;
        }
        let mut stack = vec![i];
        comp[i] = count;
        while let Some(p) = stack.pop() {
            for q in 0..n {
                if core[q] && comp[q] == usize::MAX && near(p, q) {
                    comp[q] = count;
                    stack.push(q);
                }
            }
        }
        count += 1;
    }
    (0..n)
        .map(|i| {
            if core[i] {
                comp[i] as i32
            } else {
                (0..n).filter(|&j| core[j] && near(i, j)).map(|j| comp[j] as i32).min().unwrap_or(NOISE)
            }
        })
        .collect()
}

fn dbscan_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut clusters = 0;
    for set in 0..100 {
        let n = rng.random_range(1..=200);
        let blobs: Vec<[f64; 3]> = (0..rng.random_range(1..5)).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
        let points: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                let c = blobs[rng.random_range(0..blobs.len())];
                c.map(|v| v + rng.random_range(-0.2..0.2))
            })
            .collect();
        let eps = rng.random_range(0.03..0.2);
        let min_pts = rng.random_range(1..8);
        let got = dbscan(&points, eps, min_pts);
        let want = naive_dbscan(&points, eps, min_pts);
        if got.labels != want {
            return outcome(false, format!("set {set}: labels differ"));
        }
        clusters += got.cluster_count();
    }
    outcome(true, format!("100 sets identical, {clusters} clusters in total"))
}

fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    plantsplat_cli::collect_artifacts(dir)
        .unwrap()
        .into_iter()
        .map(|a| {
            let bytes = std::fs::read(dir.join(&a.path)).unwrap();
            (a.path, bytes)
        })
        .collect()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let data = dir.path().join("data");
    std::fs::write(dir.path().join("small.toml"), "width = 32\nheight = 32\n").unwrap();
    cli(&["synth", "--spec", &s(&dir.path().join("small.toml")), "--out", &s(&data)]).unwrap();
    let manifest = s(&data.join("manifest.json"));
    let mut checkpoints = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        cli(&[
            "--config",
            &s(&data.join("train.toml")),
            "--seed",
            "7",
            "--threads",
            "1",
            "train",
            "--manifest",
            &manifest,
            "--out",
            &s(&out),
            "--iterations",
            "600",
            "--checkpoint-every",
            "300",
        ])
        .unwrap();
        let mut files = files_under(&out.join("checkpoint"));
        for (p, b) in files_under(&out.join("checkpoints")) {
            files.insert(format!("checkpoints/{p}"), b);
        }
        checkpoints.push(files);
    }
    let train_same = checkpoints[0] == checkpoints[1];
    let mut manifests = Vec::new();
    for (k, seed) in [(0, "3"), (1, "3"), (2, "4")] {
        let out = dir.path().join(format!("prep{k}"));
        cli(&[
            "--seed",
            seed,
            "prepare",
            "--images",
            &s(&data.join("images")),
            "--colmap",
            &s(&data.join("colmap_text")),
            "--out",
            &s(&out),
            "--factor",
            "2",
        ])
        .unwrap();
        manifests.push(std::fs::read(out.join("manifest.json")).unwrap());
    }
    let prep_same = manifests[0] == manifests[1];
    let seed_matters = manifests[0] != manifests[2];
    outcome(
        train_same && prep_same && seed_matters,
        format!(
            "checkpoints ({} files) {}, prepare manifests {} per seed",
            checkpoints[0].len(),
            if train_same { "bit-identical" } else { "differ" },
            if prep_same { "byte-identical" } else { "differ" }
        ),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 12] = [
        (1, "renderer matches the reference", renderer_matches_oracle),
        (2, "analytic gradients match finite differences", gradients_match_finite_differences),
        (3, "masked pixels give no gradient", masked_pixels_give_no_gradient),
        (4, "empty pixels show the background", empty_pixels_show_background),
        (5, "refinement never keeps faint splats", pruning_contract),
        (6, "synthetic reconstruction converges", synthetic_convergence),
        (7, "object-centric training is leaner", object_centric_efficiency),
        (8, "trait pipeline accuracy", trait_accuracy),
        (9, "traits are scale covariant", scale_covariance),
        (10, "metric test vectors", metric_vectors),
        (11, "DBSCAN matches brute force", dbscan_oracle),
        (12, "train and prepare are deterministic", determinism),
    ];
    let mut failed = Vec::new();
    for (n, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        println!(
            "criterion {n:>2} {} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
