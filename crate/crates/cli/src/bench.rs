use std::path::Path;
use std::time::Instant;

use ocularage_core::dataman::Modality;
use ocularage_core::nnet::{quantize_fp16, OcularNet, Precision, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::commands::load_checkpoint;
use crate::workspace::write_text;
use crate::{CliError, RunConfig};

const INPUT_SEED: u64 = 7;

/// Single-image forward-pass latency of one model variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchReport {
    pub model_id: String,
    pub precision: Precision,
    pub param_count: usize,
    pub size_bytes_fp32: usize,
    pub size_bytes_fp16: usize,
    pub batch_size: usize,
    pub warmup: usize,
    pub iterations: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub cv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchPair {
    pub fp32: BenchReport,
    pub fp16: BenchReport,
}

/// Mean, median, nearest-rank p95 and coefficient of variation.
pub fn latency_stats(samples_ms: &[f64]) -> (f64, f64, f64, f64) {
    let n = samples_ms.len();
    assert!(n > 0, "latency needs samples");
    let mut s = samples_ms.to_vec();
    s.sort_by(f64::total_cmp);
    let mean = s.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    let p95 = s[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
    let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let cv = if mean > 0.0 { var.sqrt() / mean } else { 0.0 };
    (mean, median, p95, cv)
}

fn time_model(net: &OcularNet, input: &Tensor, warmup: usize, iterations: usize) -> Result<Vec<f64>, CliError> {
    let run = |x: Tensor| net.infer(x).map_err(|e| CliError::Eval(e.to_string()));
    for _ in 0..warmup {
        std::hint::black_box(run(input.clone())?);
    }
    let mut samples = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let x = input.clone();
        let t = Instant::now();
        std::hint::black_box(run(x)?);
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(samples)
}

/// Times `iterations` single-image forward passes (after `warmup` discarded
/// ones) for the FP32 model and its FP16-rounded copy. Preprocessing is not
/// timed; the input is a fixed random tensor of the model's input shape.
pub fn bench_model(
    model_id: &str,
    net: &OcularNet,
    warmup: usize,
    iterations: usize,
) -> Result<BenchPair, CliError> {
    let mut shape = vec![1];
    shape.extend_from_slice(&net.topology.input_shape);
    let mut rng = ChaCha8Rng::seed_from_u64(INPUT_SEED);
    let input = Tensor::from_fn(&shape, |_| rng.random_range(-2.0f32..2.0));
    let fp16 = quantize_fp16(net);
    let report = |net: &OcularNet| -> Result<BenchReport, CliError> {
        let samples = time_model(net, &input, warmup, iterations)?;
        let (mean_ms, median_ms, p95_ms, cv) = latency_stats(&samples);
        Ok(BenchReport {
            model_id: model_id.to_string(),
            precision: net.precision,
            param_count: net.param_count(),
            size_bytes_fp32: net.param_count() * Precision::Fp32.bytes_per_param(),
            size_bytes_fp16: fp16.param_bytes(),
            batch_size: 1,
            warmup,
            iterations,
            mean_ms,
            median_ms,
            p95_ms,
            cv,
        })
    };
    Ok(BenchPair {
        fp32: report(net)?,
        fp16: report(&fp16)?,
    })
}

/// Benchmarks a checkpoint single-threaded and writes `bench.json`.
pub fn cmd_bench(cfg: &RunConfig, modality: Modality, checkpoint: &Path) -> Result<BenchPair, CliError> {
    let ckpt = load_checkpoint(checkpoint, modality)?;
    let stem = checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let id = format!("{modality}/{stem}");
    let pair = ocularage_core::par::with_workers(cfg.workers, || {
        bench_model(&id, &ckpt.net, cfg.bench.warmup, cfg.bench.iterations)
    })?;
    let json = serde_json::to_string_pretty(&pair).expect("bench report serializes");
    write_text(&cfg.report_dir(modality).join("bench.json"), &(json + "\n"))?;
    Ok(pair)
}
