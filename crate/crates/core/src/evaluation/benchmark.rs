//! Batch-1 inference timing of the two deployment pipelines: one multitask
//! model versus a pair of single-task models.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::model::{CrossTalkState, Model};
use crate::tensor::Tensor;

/// Warmup passes are never fewer than this.
pub const MIN_WARMUP: usize = 5;
/// Timed runs per pipeline; the reported rate is their median.
pub const TIMED_RUNS: usize = 7;

pub enum Pipeline<'a> {
    Multitask(&'a Model),
    /// Both single-task models run on every image.
    Single {
        element: &'a Model,
        defect: &'a Model,
    },
}

impl Pipeline<'_> {
    fn models(&self) -> Vec<&Model> {
        match self {
            Pipeline::Multitask(m) => vec![m],
            Pipeline::Single { element, defect } => vec![element, defect],
        }
    }

    fn run(&self, image: &Tensor, states: &mut [CrossTalkState]) -> Result<()> {
        for (m, s) in self.models().into_iter().zip(states.iter_mut()) {
            m.forward(image, s)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub pipeline: String,
    /// Filled in by callers that also timed training.
    pub training_minutes: Option<f64>,
    /// Median over timed runs of images per second.
    pub inference_fps: f64,
    /// Median wall time of one timed run.
    pub median_run_seconds: f64,
    pub extractor_calls_per_image: usize,
    pub images_per_run: usize,
    pub hardware: String,
}

/// Short description of the machine the benchmark ran on.
pub fn hardware_descriptor() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    format!(
        "{cpu}; {threads} hardware threads; {}-{}; single-threaded f64 inference",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `n_timed` batch-1 forward passes per run (cycling through
/// `images`) after `max(n_warmup, MIN_WARMUP)` warmup passes, repeated
/// [`TIMED_RUNS`] times.
///
/// A model that appears in several pipelines has its extractor calls
/// counted once per pipeline it runs in; give each pipeline its own models
/// when the counts matter.
pub fn benchmark_inference(
    pipelines: &[(&str, Pipeline<'_>)],
    images: &[Tensor],
    n_warmup: usize,
    n_timed: usize,
) -> Result<Vec<BenchmarkResult>> {
    if n_timed == 0 {
        return Err(Error::Validation("n_timed must be at least 1".into()));
    }
    if images.is_empty() {
        return Err(Error::Validation(
            "benchmark needs at least one image".into(),
        ));
    }
    let hardware = hardware_descriptor();
    let mut states: Vec<Vec<CrossTalkState>> = pipelines
        .iter()
        .map(|(_, p)| p.models().iter().map(|_| CrossTalkState::new()).collect())
        .collect();
    for ((_, pipeline), states) in pipelines.iter().zip(states.iter_mut()) {
        for i in 0..n_warmup.max(MIN_WARMUP) {
            pipeline.run(&images[i % images.len()], states)?;
        }
        for m in pipeline.models() {
            m.reset_extractor_calls();
        }
    }
    // runs are interleaved across pipelines so that slow periods of the
    // host hit every pipeline alike
    let mut seconds = vec![Vec::with_capacity(TIMED_RUNS); pipelines.len()];
    for _ in 0..TIMED_RUNS {
        for (k, ((_, pipeline), states)) in pipelines.iter().zip(states.iter_mut()).enumerate() {
            let start = Instant::now();
            for i in 0..n_timed {
                pipeline.run(&images[i % images.len()], states)?;
            }
            seconds[k].push(start.elapsed().as_secs_f64());
        }
    }
    let passes = n_timed * TIMED_RUNS;
    let mut results = Vec::with_capacity(pipelines.len());
    for ((name, pipeline), seconds) in pipelines.iter().zip(seconds) {
        let calls: usize = pipeline.models().iter().map(|m| m.extractor_calls()).sum();
        results.push(BenchmarkResult {
            pipeline: name.to_string(),
            training_minutes: None,
            inference_fps: median(
                seconds
                    .iter()
                    .map(|s| n_timed as f64 / s.max(1e-12))
                    .collect(),
            ),
            median_run_seconds: median(seconds),
            extractor_calls_per_image: calls / passes,
            images_per_run: n_timed,
            hardware: hardware.clone(),
        });
    }
    Ok(results)
}

pub fn render_benchmark_table(results: &[BenchmarkResult]) -> String {
    let mut s = String::from("Computational time (batch size 1)\n");
    s.push_str(&format!(
        "{:<26} | {:>14} | {:>14} | {:>15}\n",
        "Pipeline", "Training (min)", "Inference FPS", "Extractor calls"
    ));
    s.push_str(&format!("{}\n", "-".repeat(78)));
    for r in results {
        let train = r
            .training_minutes
            .map_or("-".to_string(), |m| format!("{m:.3}"));
        s.push_str(&format!(
            "{:<26} | {:>14} | {:>14.2} | {:>15}\n",
            r.pipeline, train, r.inference_fps, r.extractor_calls_per_image
        ));
    }
    if let Some(r) = results.first() {
        s.push_str(&format!("hardware: {}\n", r.hardware));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::config::{Dims, ModelConfig};
    use crate::network::model::build_model;

    #[test]
    fn counts_extractor_calls_per_pipeline() {
        let d = Dims::square(16, 8);
        let mtl = build_model(ModelConfig::variant("MTL-A", d).unwrap()).unwrap();
        let se = build_model(ModelConfig::single_element(d)).unwrap();
        let sd = build_model(ModelConfig::single_defect(d)).unwrap();
        let images = vec![Tensor::zeros(&[3, 16, 16])];
        let r = benchmark_inference(
            &[
                ("MTL-A", Pipeline::Multitask(&mtl)),
                (
                    "Single",
                    Pipeline::Single {
                        element: &se,
                        defect: &sd,
                    },
                ),
            ],
            &images,
            0,
            3,
        )
        .unwrap();
        assert_eq!(r[0].extractor_calls_per_image, 1);
        assert_eq!(r[1].extractor_calls_per_image, 2);
        assert!(r.iter().all(|b| b.inference_fps > 0.0));
        assert!(render_benchmark_table(&r).contains("Single"));
        assert!(benchmark_inference(&[], &images, 0, 0).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
