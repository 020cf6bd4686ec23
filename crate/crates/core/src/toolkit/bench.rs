use std::time::Instant;

use super::metrics::expand_box;
use super::phantom::{synth_phantom, PhantomConfig};
use crate::decoder::DecoderModel;
use crate::error::{invalid, Result};
use crate::numerics::RngStream;
use crate::tvbi::{infer, TokenStats};

pub const WARMUP: usize = 3;

/// Wall-clock seconds per single-threaded `infer` call.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub samples: Vec<f64>,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

impl BenchReport {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let pick = |q: f64| sorted[((q * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
        Self {
            mean: samples.iter().sum::<f64>() / samples.len() as f64,
            p50: pick(0.5),
            p95: pick(0.95),
            samples,
        }
    }
}

/// Times `repetitions` inferences on a square phantom of side `image_size`
/// after [`WARMUP`] untimed runs.
pub fn bench_latency(
    model: &DecoderModel,
    stats: &TokenStats,
    k: usize,
    image_size: usize,
    repetitions: usize,
) -> Result<BenchReport> {
    if repetitions < 10 {
        return invalid("benchmark needs at least 10 repetitions");
    }
    let (image, mask) = synth_phantom(&PhantomConfig::sized(image_size), &mut RngStream::new(0, 0))?;
    let prompt = expand_box(&mask, 10)?;
    for i in 0..WARMUP {
        infer(model, &image, &prompt, stats, k, i as u64)?;
    }
    let mut samples = Vec::with_capacity(repetitions);
    for i in 0..repetitions {
        let start = Instant::now();
        let p = infer(model, &image, &prompt, stats, k, i as u64)?;
        samples.push(start.elapsed().as_secs_f64());
        std::hint::black_box(p);
    }
    Ok(BenchReport::from_samples(samples))
}
