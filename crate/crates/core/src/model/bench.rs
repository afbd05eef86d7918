use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::Result;
use crate::numerics::Graph;
use crate::pose::Pose;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub batch_size: usize,
    pub parameters: usize,
    /// Bytes held by parameters plus every recorded activation of one
    /// inference pass.
    pub peak_bytes: usize,
    pub mean_ms: f64,
    /// Frames per second: batch size over mean batch latency.
    pub fps: f64,
    pub runs: usize,
}

/// Times inference at the bounds center for each batch size, averaging over
/// `runs` repetitions after one warm-up pass.
pub fn bench(model: &Model, batch_sizes: &[usize], runs: usize) -> Result<Vec<BenchRow>> {
    let pose = Pose::new(model.bounds().center(), crate::pose::Quat::IDENTITY);
    let encoded = model.encode(&pose)?;
    let runs = runs.max(1);
    batch_sizes
        .iter()
        .map(|&b| {
            let batch: Vec<_> = std::iter::repeat_n(&encoded, b.max(1)).collect();
            let mut graph = Graph::<f32>::new();
            model.record_inference(&mut graph, &batch)?;
            let peak_bytes = graph.value_bytes();
            let t0 = Instant::now();
            for _ in 0..runs {
                std::hint::black_box(model.forward_batch(&batch)?);
            }
            let mean_ms = t0.elapsed().as_secs_f64() * 1e3 / runs as f64;
            Ok(BenchRow {
                batch_size: batch.len(),
                parameters: model.parameter_count(),
                peak_bytes,
                mean_ms,
                fps: batch.len() as f64 / (mean_ms / 1e3),
                runs,
            })
        })
        .collect()
}
