//! Evaluation metrics, microcontroller profiles and per-config reports.

mod mcu;
mod metrics;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use mcu::{
    builtin_profiles, estimate_arena, estimate_arena_layers, estimate_arena_quantized,
    estimate_energy, estimate_latency, find_profile, fits_on, ArenaEstimate, FeasibilityVerdict,
    LatencyModel, McuProfile, RuntimeOverhead, KIB, M4_CORE_FACTOR, M7_CORE_FACTOR, MIB,
};
pub use metrics::{
    accuracy, confusion, confusion_over, macro_f1, macro_f1_over, ConfusionMatrix, MetricError,
};

use crate::datapipe::{ChannelGroup, WindowedSample};
use crate::float_engine::{self, EngineError};
use crate::int8_engine::{Int8Error, Int8Executor};
use crate::model_ir::{Architecture, FilterLevel, ModelGraph, Precision};
use crate::quantizer::QuantizedModel;

/// Identity of one sweep entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConfigDescriptor {
    pub arch: Architecture,
    pub group: ChannelGroup,
    pub level: FilterLevel,
    pub precision: Precision,
}

impl ConfigDescriptor {
    pub fn channels(&self) -> usize {
        self.group.len()
    }

    pub fn filters(&self) -> usize {
        self.level.filters(self.arch)
    }

    /// Channel groups × filter levels × architectures × precisions, in report order.
    pub fn grid() -> Vec<ConfigDescriptor> {
        let mut out = Vec::with_capacity(48);
        for arch in Architecture::ALL {
            for group in [
                ChannelGroup::G17,
                ChannelGroup::G23,
                ChannelGroup::G768,
                ChannelGroup::G791,
            ] {
                for level in FilterLevel::ALL {
                    for precision in [Precision::Float32, Precision::Int8Full] {
                        out.push(ConfigDescriptor {
                            arch,
                            group,
                            level,
                            precision,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Host wall-clock inference statistics in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub runs: usize,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p95_us: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles over `samples_us`.
    pub fn from_samples(samples_us: &[f64]) -> Option<Self> {
        if samples_us.is_empty() {
            return None;
        }
        let mut sorted: Vec<f64> = samples_us.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = |q: f64| {
            let r = libm_ceil(q * sorted.len() as f64) as usize;
            sorted[r.clamp(1, sorted.len()) - 1]
        };
        Some(Self {
            runs: sorted.len(),
            mean_us: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p50_us: rank(0.5),
            p95_us: rank(0.95),
        })
    }
}

fn libm_ceil(x: f64) -> f64 {
    num_traits::Float::ceil(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McuEstimate {
    pub profile: String,
    pub latency_ms: f64,
    pub energy_mj: f64,
    pub verdict: FeasibilityVerdict,
}

/// Latency, energy and feasibility of one model on every profile.
pub fn mcu_estimates(
    macs: u64,
    model_size: u64,
    arena: u64,
    precision: Precision,
    profiles: &[McuProfile],
    overhead: RuntimeOverhead,
    latency: &LatencyModel,
) -> Vec<McuEstimate> {
    profiles
        .iter()
        .map(|p| {
            let latency_ms = estimate_latency(macs, precision, p, latency);
            McuEstimate {
                profile: p.name.clone(),
                latency_ms,
                energy_mj: estimate_energy(latency_ms, p, precision),
                verdict: fits_on(model_size, arena, p, overhead),
            }
        })
        .collect()
}

/// Everything measured or estimated for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ConfigDescriptor,
    /// `None` when the model was not trained.
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub confusion: Option<ConfusionMatrix>,
    pub model_size: u64,
    pub mac_count: u64,
    pub arena_bytes: u64,
    pub host_latency: Option<LatencyStats>,
    pub mcu: Vec<McuEstimate>,
    /// Failure text when the configuration could not be evaluated.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Float(#[from] EngineError),
    #[error(transparent)]
    Int8(#[from] Int8Error),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Either executable form of a model.
#[derive(Debug, Clone, Copy)]
pub enum ModelRef<'a> {
    Float(&'a ModelGraph),
    Int8(&'a QuantizedModel),
}

impl ModelRef<'_> {
    pub fn precision(&self) -> Precision {
        match self {
            ModelRef::Float(_) => Precision::Float32,
            ModelRef::Int8(_) => Precision::Int8Full,
        }
    }
}

/// Predicted class of every sample.
pub fn predict_all(model: ModelRef<'_>, samples: &[WindowedSample]) -> Result<Vec<u8>, EvalError> {
    match model {
        ModelRef::Float(g) => samples
            .iter()
            .map(|s| Ok(float_engine::argmax(&float_engine::forward(g, &s.window)?) as u8))
            .collect(),
        ModelRef::Int8(q) => {
            let mut ex = Int8Executor::new(q);
            samples
                .iter()
                .map(|s| Ok(ex.run(&s.window)?.class as u8))
                .collect()
        }
    }
}

/// Accuracy, macro F1 and confusion of `model` on `samples`.
pub fn evaluate(
    model: ModelRef<'_>,
    samples: &[WindowedSample],
) -> Result<(f64, f64, ConfusionMatrix), EvalError> {
    let preds = predict_all(model, samples)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let m = confusion(&preds, &labels)?;
    Ok((m.accuracy(), m.macro_f1(), m))
}
