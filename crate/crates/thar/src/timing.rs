//! Host wall-clock inference timing.

use std::hint::black_box;
use std::time::Instant;

use thar_core::benchlab::{EvalError, LatencyStats, ModelRef};
use thar_core::float_engine;
use thar_core::int8_engine::Int8Executor;
use thar_core::Tensor2D;

/// Warm-up runs discarded before measuring.
pub const DEFAULT_WARMUP: usize = 3;

/// Times `repetitions` inferences on `window` after [`DEFAULT_WARMUP`] discarded runs.
pub fn timed_inference(
    model: ModelRef<'_>,
    window: &Tensor2D,
    repetitions: usize,
) -> Result<LatencyStats, EvalError> {
    timed_inference_with(model, window, repetitions, DEFAULT_WARMUP)
}

/// Input quantization happens once, outside the timed region.
pub fn timed_inference_with(
    model: ModelRef<'_>,
    window: &Tensor2D,
    repetitions: usize,
    warmup: usize,
) -> Result<LatencyStats, EvalError> {
    let repetitions = repetitions.max(1);
    let mut samples = Vec::with_capacity(repetitions);
    match model {
        ModelRef::Float(g) => {
            for i in 0..warmup + repetitions {
                let t = Instant::now();
                black_box(float_engine::forward(g, black_box(window))?);
                let us = t.elapsed().as_secs_f64() * 1e6;
                if i >= warmup {
                    samples.push(us);
                }
            }
        }
        ModelRef::Int8(q) => {
            let mut ex = Int8Executor::new(q);
            let input = ex.quantize_input(window)?;
            for i in 0..warmup + repetitions {
                let t = Instant::now();
                black_box(ex.run_prequantized(black_box(&input))?);
                let us = t.elapsed().as_secs_f64() * 1e6;
                if i >= warmup {
                    samples.push(us);
                }
            }
        }
    }
    Ok(LatencyStats::from_samples(&samples).expect("at least one repetition"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use thar_core::model_ir::{build_architecture, Architecture, FilterLevel};

    #[test]
    fn single_repetition_has_equal_mean_and_median() {
        let g = build_architecture(Architecture::McCnn, 17, FilterLevel::N1, 24, 1).unwrap();
        let w = Tensor2D::zeros(24, 17);
        let s = timed_inference(ModelRef::Float(&g), &w, 1).unwrap();
        assert_eq!(s.runs, 1);
        assert_eq!(s.mean_us, s.p50_us);
        assert!(s.mean_us > 0.0);
    }

    #[test]
    fn wrong_shape_is_an_error() {
        let g = build_architecture(Architecture::McCnn, 17, FilterLevel::N1, 24, 1).unwrap();
        let w = Tensor2D::zeros(24, 23);
        assert!(timed_inference(ModelRef::Float(&g), &w, 2).is_err());
    }
}
