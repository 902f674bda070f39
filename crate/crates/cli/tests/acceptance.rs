//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ocularage_cli::workspace::{load_dataset, read_split};
use ocularage_cli::{cmd_eval, cmd_preprocess, cmd_split, cmd_synth, cmd_train, RunConfig};
use ocularage_core::dataman::{
    subject_exclusive_split, AgeGroup, EyeSide, Modality, SampleRecord, Sensor, Split, SynthParams,
    DEFAULT_RATIOS,
};
use ocularage_core::eval::{
    check_leakage, classification_metrics, cross_sensor_eval, evaluate, regression_metrics, EvalDocument, EvalError,
};
use ocularage_core::multitask::{
    focal_loss, inverse_frequency_weights, multitask_loss, total_loss, FocalConfig, TrainConfig,
};
use ocularage_core::nnet::{quantize_fp16, Checkpoint, LayerSpec, Mode, OcularNet, Sequential, Tensor, Topology, Widths};
use ocularage_core::preproc::{rubber_sheet, GrayImage, IrisAnnulus, STRIP_ANGULAR, STRIP_RADIAL};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_chacha::ChaCha8Rng;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- criterion 1

/// Step for single layers and the small stack.
const LAYER_STEP: f64 = 1e-3;
/// Step for whole networks, whose many HardSwish units make a kink crossing
/// likely at the larger step.
const NETWORK_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
/// Gradient tensors below this norm (such as conv biases feeding BatchNorm,
/// whose true gradient is zero) are compared on an absolute scale.
const NORM_FLOOR: f64 = 1e-5;

/// `||a - n|| / max(||a|| + ||n||, NORM_FLOOR)` over a whole gradient tensor.
fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    diff / (norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied())).max(NORM_FLOOR)
}

fn central_diff(h: f64, mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Checks a `Sequential` under `L = sum(r * y)` in training mode for the
/// input and every parameter tensor. Returns the worst relative error.
fn check_sequential(net: &mut Sequential<f64>, x: Tensor<f64>, seed: u64) -> Result<f64, String> {
    let out_shape = net.forward(x.clone(), Mode::Train).map_err(fail)?.output().shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Tensor::from_fn(&out_shape, |_| rng.random_range(-1.0..1.0));
    let loss = |net: &Sequential<f64>, x: &Tensor<f64>| -> f64 {
        let c = net.forward(x.clone(), Mode::Train).expect("forward");
        c.output().data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let cache = net.forward(x.clone(), Mode::Train).map_err(fail)?;
    let (gx, gp) = net.backward(&cache, r.clone(), None).map_err(fail)?;

    let mut worst: f64 = 0.0;
    let mut xm = x.clone();
    let numeric: Vec<f64> = (0..x.len())
        .map(|i| {
            let orig = xm.data()[i];
            let d = central_diff(
                LAYER_STEP,
                |v| {
                    xm.data_mut()[i] = v;
                    loss(net, &xm)
                },
                orig,
            );
            xm.data_mut()[i] = orig;
            d
        })
        .collect();
    worst = worst.max(rel_error(gx.data(), &numeric));

    let n_params = net.params().count();
    for (k, analytic) in gp.iter().enumerate().take(n_params) {
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let orig = net.params().nth(k).expect("param").data()[i];
            let d = central_diff(
                LAYER_STEP,
                |v| {
                    net.params_mut().nth(k).expect("param").data_mut()[i] = v;
                    loss(net, &x)
                },
                orig,
            );
            net.params_mut().nth(k).expect("param").data_mut()[i] = orig;
            numeric.push(d);
        }
        worst = worst.max(rel_error(analytic.data(), &numeric));
    }
    Ok(worst)
}

/// Inputs spaced apart so no activation kink or max-pool tie falls inside
/// the finite-difference step.
fn spaced_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut levels: Vec<f64> = (0..n).map(|i| -4.5 + 9.0 * (i as f64 + 0.5) / n as f64).collect();
    for i in (1..n).rev() {
        levels.swap(i, rng.random_range(0..=i));
    }
    let data = levels
        .into_iter()
        .map(|v| if v.abs() < 0.05 || (v.abs() - 3.0).abs() < 0.05 { v + 0.1 } else { v })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

fn objective_check(net: &mut OcularNet<f64>, x: &Tensor<f64>, ages: &[f64]) -> Result<f64, String> {
    let groups: Vec<AgeGroup> = ages.iter().map(|&a| if a <= 9.0 { AgeGroup::Young } else { AgeGroup::Old }).collect();
    let focal = FocalConfig {
        gamma: 2.0,
        smoothing: 0.05,
        class_weights: [0.8, 1.3],
    };
    let alpha = 0.3;
    let loss = |net: &OcularNet<f64>| -> f64 {
        let (o, _) = net.forward(x.clone(), Mode::Train).expect("forward");
        multitask_loss(o.logits.data(), o.ages.data(), &groups, ages, alpha, &focal).expect("loss").total
    };
    let (out, cache) = net.forward(x.clone(), Mode::Train).map_err(fail)?;
    let bl = multitask_loss(out.logits.data(), out.ages.data(), &groups, ages, alpha, &focal).map_err(fail)?;
    let d_logits = Tensor::new(out.logits.shape().to_vec(), bl.d_logits.clone()).map_err(fail)?;
    let d_ages = Tensor::new(out.ages.shape().to_vec(), bl.d_ages.clone()).map_err(fail)?;
    let grads = net.backward(&cache, d_logits, d_ages).map_err(fail)?;

    let mut worst: f64 = 0.0;
    for (k, analytic) in grads.iter().enumerate() {
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let orig = net.params()[k].data()[i];
            let d = central_diff(
                NETWORK_STEP,
                |v| {
                    net.params_mut()[k].data_mut()[i] = v;
                    loss(net)
                },
                orig,
            );
            net.params_mut()[k].data_mut()[i] = orig;
            numeric.push(d);
        }
        worst = worst.max(rel_error(analytic.data(), &numeric));
    }
    Ok(worst)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let conv = |i, o, k, s, p| LayerSpec::Conv2d {
        in_channels: i,
        out_channels: o,
        kernel: k,
        stride: s,
        padding: p,
    };
    let cases: Vec<(&str, Vec<LayerSpec>, Vec<usize>)> = vec![
        ("conv s1", vec![conv(2, 3, 3, 1, 1)], vec![2, 2, 5, 5]),
        ("conv s2", vec![conv(2, 3, 3, 2, 1)], vec![2, 2, 6, 7]),
        (
            "depthwise",
            vec![LayerSpec::DepthwiseConv2d {
                channels: 3,
                kernel: 3,
                stride: 2,
                padding: 1,
            }],
            vec![2, 3, 6, 6],
        ),
        ("dense", vec![LayerSpec::Dense { inputs: 6, outputs: 4 }], vec![3, 6]),
        ("relu", vec![LayerSpec::Relu], vec![2, 2, 3, 3]),
        ("hardswish", vec![LayerSpec::HardSwish], vec![2, 2, 3, 3]),
        ("batchnorm", vec![LayerSpec::BatchNorm { channels: 3 }], vec![4, 3, 2, 2]),
        ("maxpool", vec![LayerSpec::MaxPool { kernel: 2, stride: 2 }], vec![2, 2, 4, 4]),
        ("gap", vec![LayerSpec::GlobalAvgPool], vec![2, 3, 3, 2]),
        (
            "3-layer net",
            vec![
                LayerSpec::Dense { inputs: 5, outputs: 6 },
                LayerSpec::HardSwish,
                LayerSpec::Dense { inputs: 6, outputs: 3 },
            ],
            vec![4, 5],
        ),
        (
            "stack",
            vec![
                conv(2, 4, 3, 1, 1),
                LayerSpec::BatchNorm { channels: 4 },
                LayerSpec::HardSwish,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { inputs: 4, outputs: 3 },
            ],
            vec![3, 2, 4, 4],
        ),
    ];
    let mut worst: Vec<String> = Vec::new();
    let mut max_err: f64 = 0.0;
    for (i, (name, specs, shape)) in cases.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let mut net = Sequential::<f64>::init(&specs, &mut rng).map_err(fail)?;
        for p in net.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
        let e = check_sequential(&mut net, spaced_input(&shape, 7 + i as u64), 11 + i as u64)?;
        ensure(e < GRAD_TOL, format!("{name}: relative error {e:.2e}"))?;
        max_err = max_err.max(e);
        worst.push(format!("{name} {e:.1e}"));
    }

    let widths = Widths {
        stem: 4,
        stages: vec![6, 8],
        neck: 8,
    };
    for (name, topo, shape) in [
        ("eye objective", Topology::ocular_with(1, 16, 16, &widths), [3, 1, 16, 16]),
        ("iris objective", Topology::ocular_with(2, 8, 32, &widths), [3, 2, 8, 32]),
    ] {
        let mut net = OcularNet::<f64>::init(topo, 5).map_err(fail)?;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
        let e = objective_check(&mut net, &x, &[5.0, 11.0, 14.0])?;
        ensure(e < GRAD_TOL, format!("{name}: relative error {e:.2e}"))?;
        max_err = max_err.max(e);
        worst.push(format!("{name} {e:.1e}"));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!("max relative error {max_err:.2e} over {} checks in {elapsed:.1?}", worst.len()))
}

// ---------------------------------------------------------------- criterion 2

fn oracle_bilinear(img: &GrayImage, x: f64, y: f64) -> Option<f64> {
    let (w, h) = (img.width(), img.height());
    if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
        return None;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let p = |a: usize, b: usize| f64::from(img.pixels()[b * w + a]);
    Some(
        p(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + p(x1, y0) * fx * (1.0 - fy)
            + p(x0, y1) * (1.0 - fx) * fy
            + p(x1, y1) * fx * fy,
    )
}

/// Point on the segment from the pupil boundary to the limbus, written as a
/// centre interpolation plus an interpolated radius.
fn oracle_point(a: &IrisAnnulus, i: usize, j: usize) -> (f64, f64) {
    let theta = i as f64 * (2.0 * PI / STRIP_ANGULAR as f64);
    let rho = (2 * j + 1) as f64 / (2 * STRIP_RADIAL) as f64;
    let cx = a.pupil_center.0 + rho * (a.iris_center.0 - a.pupil_center.0);
    let cy = a.pupil_center.1 + rho * (a.iris_center.1 - a.pupil_center.1);
    let r = a.pupil_radius + rho * (a.iris_radius - a.pupil_radius);
    (cx + r * theta.cos(), cy + r * theta.sin())
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut max_diff, mut masked, mut total) = (0.0f64, 0usize, 0usize);
    for trial in 0..100 {
        let (w, h) = (rng.random_range(60..200), rng.random_range(50..160));
        let img = GrayImage::from_fn(w, h, |_, _| rng.random::<f32>());
        let pr = rng.random_range(3.0..20.0);
        let ir = pr + rng.random_range(5.0..40.0);
        let pc = (rng.random_range(-10.0..w as f64 + 10.0), rng.random_range(-10.0..h as f64 + 10.0));
        let ic = (pc.0 + rng.random_range(-4.0..4.0), pc.1 + rng.random_range(-4.0..4.0));
        let upper = ic.1 - ir * rng.random_range(0.2..1.2);
        let a = IrisAnnulus {
            pupil_center: pc,
            pupil_radius: pr,
            iris_center: ic,
            iris_radius: ir,
            upper_lid_y: upper,
            lower_lid_y: upper + ir * rng.random_range(0.5..2.0),
        };
        let norm = rubber_sheet(&img, &a);
        for j in 0..STRIP_RADIAL {
            for i in 0..STRIP_ANGULAR {
                let (x, y) = oracle_point(&a, i, j);
                let got = f64::from(norm.strip.get(i, j));
                let (want, want_mask) = match oracle_bilinear(&img, x, y) {
                    Some(v) => (v, u8::from(y >= a.upper_lid_y && y <= a.lower_lid_y)),
                    None => (0.0, 0),
                };
                max_diff = max_diff.max((got - want).abs());
                ensure(
                    norm.mask_at(i, j) == want_mask,
                    format!("annulus {trial}: mask differs at ({i}, {j})"),
                )?;
                masked += usize::from(want_mask == 0);
                total += 1;
            }
        }
    }
    ensure(max_diff <= 1e-6, format!("max element difference {max_diff:.2e}"))?;
    Ok(format!(
        "100 annuli, max difference {max_diff:.1e}, {total} mask cells identical ({masked} occluded)"
    ))
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for fixture in 0..1000 {
        let n = rng.random_range(1..200);
        let truth: Vec<AgeGroup> = (0..n).map(|_| AgeGroup::ALL[rng.random_range(0..2)]).collect();
        let pred: Vec<AgeGroup> = (0..n).map(|_| AgeGroup::ALL[rng.random_range(0..2)]).collect();
        let c = classification_metrics(&pred, &truth).map_err(fail)?;

        let correct = (0..n).filter(|&i| pred[i] == truth[i]).count();
        let mut expect = vec![correct as f64 / n as f64];
        let mut f1s = Vec::new();
        for g in AgeGroup::ALL {
            let tp = (0..n).filter(|&i| pred[i] == g && truth[i] == g).count() as f64;
            let fp = (0..n).filter(|&i| pred[i] == g && truth[i] != g).count() as f64;
            let fn_ = (0..n).filter(|&i| pred[i] != g && truth[i] == g).count() as f64;
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            let f = if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fn_) } else { 0.0 };
            expect.extend([p, r, f]);
            f1s.push(f);
        }
        expect.push(f1s.iter().sum::<f64>() / 2.0);
        let got = [
            c.accuracy,
            c.young.precision,
            c.young.recall,
            c.young.f1,
            c.old.precision,
            c.old.recall,
            c.old.f1,
            c.macro_f1,
        ];
        for (g, e) in got.iter().zip(&expect) {
            worst = worst.max((g - e).abs());
        }

        let pa: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..20.0)).collect();
        let ta: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(4u32..=16))).collect();
        let r = regression_metrics(&pa, &ta).map_err(fail)?;
        let err: Vec<f64> = pa.iter().zip(&ta).map(|(p, t)| (p - t).abs()).collect();
        let mae = err.iter().sum::<f64>() / n as f64;
        let rmse = (err.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
        let w1 = err.iter().filter(|&&e| e <= 1.0).count() as f64 / n as f64;
        let w2 = err.iter().filter(|&&e| e <= 2.0).count() as f64 / n as f64;
        for (g, e) in [(r.mae, mae), (r.rmse, rmse), (r.within_1yr, w1), (r.within_2yr, w2)] {
            worst = worst.max((g - e).abs());
        }
        ensure(r.rmse >= r.mae, format!("fixture {fixture}: rmse {} < mae {}", r.rmse, r.mae))?;
    }
    ensure(worst <= 1e-9, format!("max deviation {worst:.2e}"))?;
    Ok(format!("1000 fixtures, max deviation {worst:.1e}, RMSE >= MAE on all"))
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let z = [rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0)];
        let target = AgeGroup::ALL[rng.random_range(0..2)];
        let bce: f64 = (0..2)
            .map(|c| {
                let p = 1.0 / (1.0 + (-z[c] as f64).exp());
                if c == target.index() {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum::<f64>()
            / 2.0;
        worst = worst.max((focal_loss(z, target, 0.0, [1.0, 1.0], 0.0) - bce).abs());
    }
    ensure(worst <= 1e-9, format!("focal vs BCE deviation {worst:.2e}"))?;

    for _ in 0..1000 {
        let (cls, reg, alpha) = (rng.random_range(0.0..3.0), rng.random_range(0.0..50.0), rng.random_range(0.0..10.0));
        ensure(total_loss(cls, reg, alpha) == cls + alpha * reg, "total_loss differs from cls + alpha * reg")?;
    }
    let n = 6;
    let logits: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let ages: Vec<f64> = (0..n).map(|_| rng.random_range(4.0..16.0)).collect();
    let truth: Vec<f64> = (0..n).map(|i| 4.0 + 2.0 * i as f64).collect();
    let groups: Vec<AgeGroup> = truth.iter().map(|&a| if a <= 9.0 { AgeGroup::Young } else { AgeGroup::Old }).collect();
    let bl = multitask_loss(&logits, &ages, &groups, &truth, 0.37, &FocalConfig::default()).map_err(fail)?;
    ensure(bl.total == bl.cls + 0.37 * bl.reg, "batch total differs from cls + alpha * reg")?;

    for (young, old) in [(1usize, 1usize), (3, 1), (1, 7), (10, 30), (250, 1)] {
        let mut labels = vec![AgeGroup::Young; young];
        labels.extend(vec![AgeGroup::Old; old]);
        let w = inverse_frequency_weights(&labels).map_err(fail)?;
        let total = (young + old) as f64;
        let want = [total / (2.0 * young as f64), total / (2.0 * old as f64)];
        ensure(w == want, format!("weights {w:?} != {want:?} for {young}/{old}"))?;
    }
    Ok(format!("focal == BCE within {worst:.1e} on 10k cases; total exact; 5 weight fixtures"))
}

// ---------------------------------------------------------------- criterion 5

fn random_manifest(rng: &mut ChaCha8Rng) -> Vec<SampleRecord> {
    let subjects = rng.random_range(20..=60);
    let mut records = Vec::new();
    for s in 0..subjects {
        let birth = rng.random_range(2000..2010);
        for k in 0..rng.random_range(1..=8) {
            let capture = birth + rng.random_range(4..=16);
            records.push(
                SampleRecord::new(
                    format!("S{s:03}"),
                    birth,
                    capture,
                    Sensor::SensorA,
                    EyeSide::Left,
                    Modality::Eye,
                    format!("images/S{s:03}_{k}.png"),
                )
                .expect("valid record"),
            );
        }
    }
    records
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst: f64 = 0.0;
    for trial in 0..1000 {
        let records = random_manifest(&mut rng);
        let a = subject_exclusive_split(&records, DEFAULT_RATIOS, trial).map_err(fail)?;
        ensure(
            a.train.is_disjoint(&a.val) && a.train.is_disjoint(&a.test) && a.val.is_disjoint(&a.test),
            format!("trial {trial}: subject overlap"),
        )?;
        let all: BTreeSet<&str> = records.iter().map(|r| r.subject_id.as_str()).collect();
        ensure(
            a.train.len() + a.val.len() + a.test.len() == all.len(),
            format!("trial {trial}: subjects lost"),
        )?;
        let f = a.image_fractions(&records);
        for (got, want) in f.iter().zip(DEFAULT_RATIOS) {
            worst = worst.max((got - want).abs());
        }
    }
    ensure(worst <= 0.03, format!("worst fraction deviation {:.2} points", 100.0 * worst))?;
    Ok(format!("1000 manifests, zero overlap, worst deviation {:.2} points", 100.0 * worst))
}

// ---------------------------------------------------------------- criterion 9

/// `n` inputs from the model's input domain: standardized intensity drawn
/// from N(0, 1) and, for two-channel iris input, a Bernoulli(0.5) mask.
fn random_inputs(input_shape: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut shape = vec![n];
    shape.extend_from_slice(input_shape);
    let plane: usize = input_shape[1..].iter().product();
    let channels = input_shape[0];
    Tensor::from_fn(&shape, |i| {
        if channels == 2 && (i / plane) % 2 == 1 {
            f32::from(u8::from(rng.random_bool(0.5)))
        } else {
            StandardNormal.sample(rng)
        }
    })
}

/// Checks freshly initialized nets plus any trained ones passed in.
fn criterion_9(trained: &[(String, OcularNet)]) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut nets = Vec::new();
    for (name, topo) in [("eye", Topology::ocular(1, 240, 320)), ("iris", Topology::ocular(2, 32, 256))] {
        nets.push((format!("{name} init"), OcularNet::<f32>::init(topo, 42).map_err(fail)?));
    }
    nets.extend(trained.iter().cloned());
    for (name, net) in &nets {
        let topo = &net.topology;
        let q = quantize_fp16(net);
        ensure(
            q.param_bytes() * 2 == net.param_bytes(),
            format!("{name}: {} bytes is not half of {}", q.param_bytes(), net.param_bytes()),
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(909);
        for _ in 0..10 {
            let x = random_inputs(&topo.input_shape, 10, &mut rng);
            let a = net.infer(x.clone()).map_err(fail)?;
            let b = q.infer(x).map_err(fail)?;
            for (u, v) in a.logits.data().iter().zip(b.logits.data()) {
                worst = worst.max(f64::from((u - v).abs()));
            }
        }
    }
    ensure(worst < 1e-2, format!("max logit difference {worst:.2e}"))?;
    let names: Vec<&str> = nets.iter().map(|(n, _)| n.as_str()).collect();
    Ok(format!(
        "100 inputs each for {}; max logit difference {worst:.1e}; bytes halve",
        names.join(", ")
    ))
}

// ------------------------------------------------------- pipeline criteria

fn small_config(dir: &Path, subjects: usize, sensor_b: f64, epochs: u32) -> RunConfig {
    RunConfig {
        workspace: dir.to_path_buf(),
        workers: 1,
        synth: SynthParams {
            subject_count: subjects,
            sessions_per_subject: 3,
            sensor_b_fraction: sensor_b,
            ..SynthParams::default()
        },
        train: TrainConfig {
            epochs,
            batch_size: 16,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    }
}

fn prepare(cfg: &RunConfig) -> Result<(), String> {
    cmd_synth(cfg).map_err(fail)?;
    cmd_preprocess(cfg).map_err(fail)?;
    cmd_split(cfg).map_err(fail)?;
    Ok(())
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail)?;
    let cfg = small_config(dir.path(), 24, 0.5, 2);
    prepare(&cfg)?;
    let (ckpt_path, _) = cmd_train(&cfg, Modality::Eye, &mut |_| {}).map_err(fail)?;
    let doc = cmd_eval(&cfg, Modality::Eye, &ckpt_path, true).map_err(fail)?;
    let x = doc.cross_sensor.as_ref().ok_or("no cross-sensor section")?;
    let text = std::fs::read_to_string(cfg.report_dir(Modality::Eye).join("report.json")).map_err(fail)?;
    EvalDocument::from_json(&text).map_err(fail)?;
    let finite = [
        x.same_sensor.classification.accuracy,
        x.same_sensor.regression.mae,
        x.other_sensor.classification.accuracy,
        x.other_sensor.regression.mae,
        x.delta.accuracy_drop,
        x.delta.mae_increase,
    ];
    ensure(finite.iter().all(|v| v.is_finite()), "non-finite metric")?;
    for f in ["sensor_delta.csv", "other_sensor_metrics.csv", "metrics.csv"] {
        ensure(cfg.report_dir(Modality::Eye).join(f).exists(), format!("{f} missing"))?;
    }

    let ckpt = Checkpoint::load(&ckpt_path).map_err(fail)?;
    let split = read_split(&cfg).map_err(fail)?;
    let same = load_dataset(&cfg, Modality::Eye, Split::Test, |s| s == Sensor::SensorA).map_err(fail)?;
    let twin = cross_sensor_eval(&ckpt, &same, &same, &split.assignment.train).map_err(fail)?;
    ensure(
        twin.delta.accuracy_drop == 0.0 && twin.delta.mae_increase == 0.0,
        "identical sets give non-zero deltas",
    )?;
    let mut leaky = split.assignment.train.clone();
    let victim = same.examples[0].subject_id.clone();
    leaky.insert(victim.clone());
    ensure(
        matches!(cross_sensor_eval(&ckpt, &same, &same, &leaky), Err(EvalError::SubjectLeakage(s)) if s == victim),
        "leaky cross-sensor fixture accepted",
    )?;
    ensure(
        matches!(evaluate(&ckpt, &same, &leaky), Err(EvalError::SubjectLeakage(_))),
        "leaky evaluation fixture accepted",
    )?;
    ensure(
        check_leakage(&leaky, [victim.as_str()]).is_err() && check_leakage(&split.assignment.train, ["nobody"]).is_ok(),
        "check_leakage misclassifies fixtures",
    )?;
    Ok(format!(
        "same n={} MAE {:.2}, other n={} MAE {:.2}, accuracy drop {:+.3}, MAE increase {:+.3}; leakage rejected",
        x.same_sensor.regression.n,
        x.same_sensor.regression.mae,
        x.other_sensor.regression.n,
        x.other_sensor.regression.mae,
        x.delta.accuracy_drop,
        x.delta.mae_increase
    ))
}

fn criterion_10() -> Outcome {
    let run = || -> Result<(Vec<u8>, Vec<u8>, Vec<u8>), String> {
        let dir = tempfile::tempdir().map_err(fail)?;
        let cfg = small_config(dir.path(), 16, 0.25, 2);
        prepare(&cfg)?;
        let (ckpt, _) = cmd_train(&cfg, Modality::Eye, &mut |_| {}).map_err(fail)?;
        cmd_eval(&cfg, Modality::Eye, &ckpt, false).map_err(fail)?;
        let read = |p: &Path| std::fs::read(p).map_err(fail);
        Ok((
            read(&cfg.report_dir(Modality::Eye).join("report.json"))?,
            read(&ckpt)?,
            read(&cfg.model_dir(Modality::Eye).join("history.csv"))?,
        ))
    };
    let a = run()?;
    let b = run()?;
    ensure(a.0 == b.0, "metric JSON differs between runs")?;
    ensure(a.1 == b.1, "checkpoints differ between runs")?;
    ensure(a.2 == b.2, "training histories differ between runs")?;
    Ok(format!(
        "report.json ({} B), checkpoint ({} B) and history bit-identical",
        a.0.len(),
        a.1.len()
    ))
}

/// Mean |a - 10| over the uniform integer ages 4..=16.
fn constant_mean_baseline() -> f64 {
    (4..=16).map(|a: i32| f64::from((a - 10).abs())).sum::<f64>() / 13.0
}

struct Learnability {
    eye_test_mae: f64,
    iris_test_mae: f64,
    summary: String,
    trained: Vec<(String, OcularNet)>,
}

fn criteria_6_7(dir: &Path) -> Result<Learnability, String> {
    let start = Instant::now();
    let cfg = RunConfig {
        workspace: dir.to_path_buf(),
        workers: 0,
        synth: SynthParams {
            sensor_b_fraction: 0.0,
            ..SynthParams::default()
        },
        train: TrainConfig {
            epochs: 15,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    };
    cmd_synth(&cfg).map_err(fail)?;
    let summary = cmd_preprocess(&cfg).map_err(fail)?;
    cmd_split(&cfg).map_err(fail)?;
    ensure(
        summary.exclusion_rate() < 0.05,
        format!("exclusion rate {:.3}", summary.exclusion_rate()),
    )?;
    let (eye_ckpt, history) = cmd_train(&cfg, Modality::Eye, &mut |_| {}).map_err(fail)?;
    let eye_elapsed = start.elapsed();

    let split = read_split(&cfg).map_err(fail)?;
    let val = load_dataset(&cfg, Modality::Eye, Split::Val, |_| true).map_err(fail)?;
    let ckpt = Checkpoint::load(&eye_ckpt).map_err(fail)?;
    let report = evaluate(&ckpt, &val, &split.assignment.train).map_err(fail)?;
    let baseline = constant_mean_baseline();
    let (mae, acc) = (report.regression.mae, report.classification.accuracy);
    let summary = format!(
        "{} images, {} val, best epoch {}, val MAE {mae:.3} (baseline {baseline:.2}), accuracy {acc:.3}, {:.1?}",
        summary.total - summary.excluded,
        val.len(),
        history.best_epoch,
        eye_elapsed
    );
    if !(mae <= 2.0 && mae < baseline && acc >= 0.85 && eye_elapsed < Duration::from_secs(30 * 60)) {
        return Err(summary);
    }

    let (iris_ckpt, _) = cmd_train(&cfg, Modality::Iris, &mut |_| {}).map_err(fail)?;
    let eye_doc = cmd_eval(&cfg, Modality::Eye, &eye_ckpt, false).map_err(fail)?;
    let iris_doc = cmd_eval(&cfg, Modality::Iris, &iris_ckpt, false).map_err(fail)?;
    let iris = Checkpoint::load(&iris_ckpt).map_err(fail)?;
    Ok(Learnability {
        eye_test_mae: eye_doc.report.regression.mae,
        iris_test_mae: iris_doc.report.regression.mae,
        summary,
        trained: vec![("eye trained".into(), ckpt.net), ("iris trained".into(), iris.net)],
    })
}

// ---------------------------------------------------------------- driver

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() {
    let names = [
        "gradient correctness",
        "rubber-sheet oracle",
        "metric oracle equivalence",
        "loss identities",
        "split exclusivity",
        "synthetic learnability",
        "modality gap direction",
        "cross-sensor harness",
        "FP16 fidelity",
        "determinism",
    ];
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |k: usize, r: Outcome| {
        let (tag, msg) = match &r {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        println!("[{tag}] criterion {k:>2} {}: {msg}", names[k - 1]);
        results.push((k, r));
    };
    // Optional criterion numbers on the command line select a subset.
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |k: usize| selected.is_empty() || selected.contains(&k);
    let quick: [(usize, fn() -> Outcome); 7] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (10, criterion_10),
        (8, criterion_8),
    ];
    for (k, f) in quick {
        if wanted(k) {
            report(k, guarded(f));
        }
    }
    let mut trained = Vec::new();
    if wanted(6) || wanted(7) {
        let dir = tempfile::tempdir().expect("temp dir");
        match guarded(|| criteria_6_7(dir.path())) {
            Ok(l) => {
                trained = l.trained;
                report(6, Ok(l.summary));
                let (eye, iris) = (l.eye_test_mae, l.iris_test_mae);
                let msg = format!("test MAE eye {eye:.3} vs iris {iris:.3}");
                report(7, if eye <= iris { Ok(msg) } else { Err(msg) });
            }
            Err(e) => {
                report(6, Err(e));
                report(7, Err("not run: learnability run failed".into()));
            }
        }
    }
    // Includes the trained models when criteria 6 and 7 ran.
    if wanted(9) {
        report(9, guarded(|| criterion_9(&trained)));
    }

    results.sort_by_key(|(k, _)| *k);
    let failed: Vec<usize> = results.iter().filter(|(_, r)| r.is_err()).map(|(k, _)| *k).collect();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
