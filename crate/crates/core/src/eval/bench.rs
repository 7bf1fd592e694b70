//! Per-clip inference latency.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{load_clip, ClipConfig, ClipSet, StartPolicy};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

/// Seconds per clip.
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub samples: usize,
}

/// Nearest-rank percentile of sorted values.
fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl LatencyStats {
    pub fn from_samples(mut seconds: Vec<f64>) -> Result<Self> {
        if seconds.is_empty() {
            return Err(Error::invalid("no latency samples"));
        }
        seconds.sort_by(f64::total_cmp);
        Ok(LatencyStats {
            mean: seconds.iter().sum::<f64>() / seconds.len() as f64,
            p50: nearest_rank(&seconds, 50.0),
            p95: nearest_rank(&seconds, 95.0),
            samples: seconds.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub clips: usize,
    pub repetitions: usize,
    pub warmup: usize,
    /// Network forward pass alone.
    pub forward: LatencyStats,
    /// Decoding, cropping and selection plus the forward pass.
    pub end_to_end: LatencyStats,
    pub hardware: String,
}

pub const BENCH_HEADER: &str = "clips,repetitions,warmup,forward_mean_s,forward_p50_s,forward_p95_s,end_to_end_mean_s,end_to_end_p50_s,end_to_end_p95_s,hardware";

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let (f, e) = (&self.forward, &self.end_to_end);
        format!(
            "{BENCH_HEADER}\n{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},\"{}\"\n",
            self.clips,
            self.repetitions,
            self.warmup,
            f.mean,
            f.p50,
            f.p95,
            e.mean,
            e.p50,
            e.p95,
            self.hardware.replace('"', "'")
        )
    }
}

/// CPU model, logical core count, OS and architecture.
pub fn hardware_description() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|info| {
            info.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown CPU".into());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{cpu}; {cores} logical cores; {} {}",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Times batch-size-1 infer-mode passes over every clip of `set`,
/// `repetitions` times, after `warmup` untimed passes.
pub fn benchmark_latency(
    model: &Model<f32>,
    set: &ClipSet,
    clip: &ClipConfig,
    repetitions: usize,
    warmup: usize,
) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::invalid("benchmark needs at least one repetition"));
    }
    if set.is_empty() {
        return Err(Error::invalid("benchmark needs at least one clip"));
    }
    let shape = [1, clip.size, clip.size, clip.frames, 1];
    let load = |i: usize| -> Result<Tensor<f32>> {
        let data = load_clip(
            set.source.as_ref(),
            set.indices[i],
            clip,
            StartPolicy::Midpoint,
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        Tensor::from_vec(&shape, data)
    };
    let inputs: Vec<Tensor<f32>> = (0..set.len()).map(load).collect::<Result<_>>()?;
    for i in 0..warmup {
        model.infer(&inputs[i % inputs.len()])?;
    }
    let (mut forward, mut end_to_end) = (Vec::new(), Vec::new());
    for _ in 0..repetitions {
        for (i, input) in inputs.iter().enumerate() {
            let t0 = Instant::now();
            model.infer(input)?;
            forward.push(t0.elapsed().as_secs_f64());

            let t0 = Instant::now();
            let x = load(i)?;
            model.infer(&x)?;
            end_to_end.push(t0.elapsed().as_secs_f64());
        }
    }
    Ok(BenchReport {
        clips: set.len(),
        repetitions,
        warmup,
        forward: LatencyStats::from_samples(forward)?,
        end_to_end: LatencyStats::from_samples(end_to_end)?,
        hardware: hardware_description(),
    })
}
