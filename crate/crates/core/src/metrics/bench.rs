use std::time::Instant;

use crate::classifiers::TrainedModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WARMUP_ITERATIONS: usize = 3;

/// Inference timing over one preprocessed batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: usize,
    pub width: usize,
    pub iterations: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub flows_per_sec: f64,
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "batch {}x{}: {:.3} ± {:.3} ms/batch over {} iterations, {:.0} flows/s",
            self.rows, self.width, self.mean_ms, self.std_ms, self.iterations, self.flows_per_sec
        )
    }
}

/// Times `iterations` inference passes after a few untimed warm-up passes.
pub fn throughput_bench(
    model: &TrainedModel,
    batch: &Tensor,
    iterations: usize,
) -> Result<BenchReport> {
    if iterations < 10 {
        return Err(Error::Argument(
            "benchmark needs at least 10 iterations".into(),
        ));
    }
    if batch.is_empty() {
        return Err(Error::Argument("benchmark batch is empty".into()));
    }
    for _ in 0..WARMUP_ITERATIONS {
        std::hint::black_box(model.infer_scaled(batch)?);
    }
    let mut times = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t = Instant::now();
        std::hint::black_box(model.infer_scaled(batch)?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0);
    let rows = batch.rows();
    Ok(BenchReport {
        rows,
        width: batch.row_len(),
        iterations,
        mean_ms: mean,
        std_ms: var.sqrt(),
        flows_per_sec: rows as f64 * 1000.0 / mean,
    })
}
