//! Full-integer post-training quantization.
//!
//! Weights are quantized symmetrically per tensor (zero point 0), activations
//! asymmetrically from the (min, max) ranges observed while running the float
//! model over a representative set. Biases become int32 with scale
//! `input_scale * weight_scale`, and each conv/dense layer gets a fixed-point
//! multiplier that maps its int32 accumulator onto the output scale.

use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::float_engine::{self, EngineError, Tensor2D};
use crate::model_ir::format;
use crate::model_ir::{GraphError, LayerSpec, ModelGraph, Shape};

/// Scale substituted for zero-width ranges.
pub const DEGENERATE_SCALE: f32 = 1e-8;

/// Fixed quantization of softmax probabilities.
pub const SOFTMAX_OUTPUT: QuantParams = QuantParams {
    scale: 1.0 / 256.0,
    zero_point: -128,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantError {
    #[error("representative dataset is empty")]
    EmptyDataset,
    #[error("requantization multiplier must be positive and finite, got {0}")]
    NonPositiveMultiplier(f64),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Affine map between reals and int8: `real = (q - zero_point) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i8,
}

impl QuantParams {
    /// Round half away from zero, then saturate.
    pub fn quantize(&self, x: f32) -> i8 {
        let q = Float::round(x as f64 / self.scale as f64) + self.zero_point as f64;
        q.clamp(-128.0, 127.0) as i8
    }

    pub fn dequantize(&self, q: i8) -> f64 {
        (q as i32 - self.zero_point as i32) as f64 * self.scale as f64
    }

    /// Real interval covered by the 256 codes.
    pub fn representable(&self) -> (f64, f64) {
        (self.dequantize(-128), self.dequantize(127))
    }
}

/// Asymmetric activation parameters for `[min, max]`, widened to contain 0.
pub fn affine_params(min: f32, max: f32) -> QuantParams {
    let lo = (min as f64).min(0.0);
    let hi = (max as f64).max(0.0);
    let mut scale = ((hi - lo) / 255.0) as f32;
    if !(scale > 0.0 && scale.is_finite()) {
        scale = DEGENERATE_SCALE;
    }
    let zp = Float::round(-128.0 - lo / scale as f64).clamp(-128.0, 127.0);
    QuantParams {
        scale,
        zero_point: zp as i8,
    }
}

/// Symmetric weight parameters: `scale = max(|min|, |max|) / 127`, zero point 0.
pub fn symmetric_params(min: f32, max: f32) -> QuantParams {
    let bound = (min as f64).abs().max((max as f64).abs());
    let mut scale = (bound / 127.0) as f32;
    if !(scale > 0.0 && scale.is_finite()) {
        scale = DEGENERATE_SCALE;
    }
    QuantParams {
        scale,
        zero_point: 0,
    }
}

pub fn quantize_tensor(x: &[f32], qp: QuantParams) -> Vec<i8> {
    x.iter().map(|&v| qp.quantize(v)).collect()
}

pub fn dequantize(q: &[i8], qp: QuantParams) -> Vec<f32> {
    q.iter().map(|&v| qp.dequantize(v) as f32).collect()
}

/// Real multiplier `mantissa * 2^(exponent - 31)` with `mantissa ∈ [2^30, 2^31)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointMultiplier {
    pub mantissa: i32,
    pub exponent: i32,
}

impl FixedPointMultiplier {
    pub fn to_f64(self) -> f64 {
        self.mantissa as f64 * Float::powi(2.0f64, self.exponent - 31)
    }
}

pub fn decompose_multiplier(m: f64) -> Result<FixedPointMultiplier, QuantError> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(QuantError::NonPositiveMultiplier(m));
    }
    let (frac, mut exponent) = frexp(m);
    let mut mantissa = Float::round(frac * (1u64 << 31) as f64) as i64;
    if mantissa == 1 << 31 {
        mantissa /= 2;
        exponent += 1;
    }
    Ok(FixedPointMultiplier {
        mantissa: mantissa as i32,
        exponent,
    })
}

/// `m = frac * 2^exp` with `frac ∈ [0.5, 1)`.
fn frexp(m: f64) -> (f64, i32) {
    let bits = m.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i32;
    if raw_exp == 0 {
        // subnormal: scale into the normal range first
        let (f, e) = frexp(m * Float::powi(2.0f64, 64));
        return (f, e - 64);
    }
    let frac = f64::from_bits((bits & !(0x7ff << 52)) | (1022 << 52));
    (frac, raw_exp - 1022)
}

/// Observed value range of one tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f32,
    pub max: f32,
}

impl Range {
    pub const EMPTY: Range = Range {
        min: f32::INFINITY,
        max: f32::NEG_INFINITY,
    };

    pub fn observe(&mut self, values: &[f32]) {
        for &v in values {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
    }

    pub fn union(self, other: Range) -> Range {
        Range {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }

    pub fn contains(&self, other: &Range) -> bool {
        self.min <= other.min && self.max >= other.max
    }

    fn with_zero(self) -> Range {
        Range {
            min: self.min.min(0.0),
            max: self.max.max(0.0),
        }
    }
}

/// Activation ranges of the model input and of every layer output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub input: Range,
    pub layers: Vec<Range>,
}

impl Calibration {
    /// Associative merge of two calibrations over the same graph.
    pub fn merge(&self, other: &Calibration) -> Calibration {
        Calibration {
            input: self.input.union(other.input),
            layers: self
                .layers
                .iter()
                .zip(&other.layers)
                .map(|(a, b)| a.union(*b))
                .collect(),
        }
    }
}

/// Runs the float model over every window and records min/max per tensor.
pub fn calibrate<'a>(
    graph: &ModelGraph,
    representative: impl IntoIterator<Item = &'a Tensor2D>,
) -> Result<Calibration, QuantError> {
    let mut input = Range::EMPTY;
    let mut layers = alloc::vec![Range::EMPTY; graph.layers().len()];
    let mut seen = 0usize;
    for window in representative {
        let trace = float_engine::forward_trace(graph, window)?;
        input.observe(window.data());
        for (r, t) in layers.iter_mut().zip(&trace) {
            r.observe(t.data());
        }
        seen += 1;
    }
    if seen == 0 {
        return Err(QuantError::EmptyDataset);
    }
    Ok(Calibration {
        input: input.with_zero(),
        layers: layers.into_iter().map(Range::with_zero).collect(),
    })
}

/// Integer tensors of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantizedTensors {
    None,
    /// Conv1D (`[out][kernel][in]`) or Dense (`[out][in]`) weights.
    Affine {
        weights: Vec<i8>,
        weight_qp: QuantParams,
        bias: Vec<i32>,
        multiplier: FixedPointMultiplier,
        /// Clamp the output at the zero point (ReLU folded into this layer).
        fused_relu: bool,
    },
    /// Executed in float after dequantization; layouts as in the float graph.
    Lstm {
        input_weights: Vec<i8>,
        input_weight_qp: QuantParams,
        recurrent: Vec<i8>,
        recurrent_qp: QuantParams,
        /// Scale `input activation scale * input_weight_qp.scale`.
        bias: Vec<i32>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub spec: LayerSpec,
    pub output_qp: QuantParams,
    pub tensors: QuantizedTensors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub input_shape: Shape,
    pub num_classes: usize,
    pub input_qp: QuantParams,
    pub layers: Vec<QuantizedLayer>,
}

impl QuantizedModel {
    /// Checks layer shapes and that every tensor matches its layer.
    pub fn validate(&self) -> Result<Vec<Shape>, GraphError> {
        let specs: Vec<LayerSpec> = self.layers.iter().map(|l| l.spec).collect();
        let params = specs
            .iter()
            .map(crate::model_ir::LayerParams::zeros)
            .collect();
        // reuse the float graph checks on a zero-parameter twin
        let twin = ModelGraph::new(self.input_shape, self.num_classes, specs, params)?;
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, r, b) = layer.spec.param_shapes();
            let mismatch = |tensor, expected, got| GraphError::ParamShape {
                layer: i,
                tensor,
                expected,
                got,
            };
            match (&layer.spec, &layer.tensors) {
                (
                    LayerSpec::Conv1D { .. } | LayerSpec::Dense { .. },
                    QuantizedTensors::Affine { weights, bias, .. },
                ) => {
                    if weights.len() != w {
                        return Err(mismatch("weights", w, weights.len()));
                    }
                    if bias.len() != b {
                        return Err(mismatch("bias", b, bias.len()));
                    }
                }
                (
                    LayerSpec::Lstm { .. },
                    QuantizedTensors::Lstm {
                        input_weights,
                        recurrent,
                        bias,
                        ..
                    },
                ) => {
                    for (tensor, expected, got) in [
                        ("weights", w, input_weights.len()),
                        ("recurrent", r, recurrent.len()),
                        ("bias", b, bias.len()),
                    ] {
                        if expected != got {
                            return Err(mismatch(tensor, expected, got));
                        }
                    }
                }
                (spec, QuantizedTensors::None) if !spec.has_params() => {}
                _ => {
                    return Err(GraphError::InvalidAttribute {
                        layer: i,
                        reason: "tensor kind does not match layer kind",
                    })
                }
            }
        }
        Ok(twin.output_shapes().to_vec())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        format::serialize_quantized(self)
    }

    pub fn output_shapes(&self) -> Vec<Shape> {
        self.validate()
            .expect("quantized model was validated on construction")
    }
}

fn range_of(values: &[f32]) -> Range {
    let mut r = Range::EMPTY;
    r.observe(values);
    if values.is_empty() {
        Range { min: 0.0, max: 0.0 }
    } else {
        r
    }
}

fn quantize_bias(bias: &[f32], scale: f64) -> Vec<i32> {
    bias.iter()
        .map(|&b| Float::round(b as f64 / scale).clamp(i32::MIN as f64, i32::MAX as f64) as i32)
        .collect()
}

/// Converts a float graph into a full-integer model.
pub fn quantize_model<'a>(
    graph: &ModelGraph,
    representative: impl IntoIterator<Item = &'a Tensor2D>,
) -> Result<QuantizedModel, QuantError> {
    let cal = calibrate(graph, representative)?;
    quantize_with_calibration(graph, &cal)
}

pub fn quantize_with_calibration(
    graph: &ModelGraph,
    cal: &Calibration,
) -> Result<QuantizedModel, QuantError> {
    let specs = graph.layers();
    let input_qp = affine_params(cal.input.min, cal.input.max);
    let mut in_qp = input_qp;
    let mut layers = Vec::with_capacity(specs.len());
    for (i, (spec, p)) in specs.iter().zip(graph.params()).enumerate() {
        let (output_qp, tensors) = match *spec {
            LayerSpec::Conv1D { .. } | LayerSpec::Dense { .. } => {
                let fused_relu = specs.get(i + 1) == Some(&LayerSpec::ReLU);
                let out_range = if fused_relu {
                    cal.layers[i + 1]
                } else {
                    cal.layers[i]
                };
                let out_qp = affine_params(out_range.min, out_range.max);
                let w_range = range_of(&p.weights);
                let weight_qp = symmetric_params(w_range.min, w_range.max);
                let weights =
                    match *spec {
                        LayerSpec::Conv1D {
                            in_channels,
                            out_filters,
                            kernel,
                        } => {
                            let mut q = Vec::with_capacity(p.weights.len());
                            for f in 0..out_filters {
                                for k in 0..kernel {
                                    for c in 0..in_channels {
                                        q.push(weight_qp.quantize(
                                            p.weights[(c * kernel + k) * out_filters + f],
                                        ));
                                    }
                                }
                            }
                            q
                        }
                        LayerSpec::Dense { in_dim, out_dim } => {
                            let mut q = Vec::with_capacity(p.weights.len());
                            for o in 0..out_dim {
                                for j in 0..in_dim {
                                    q.push(weight_qp.quantize(p.weights[j * out_dim + o]));
                                }
                            }
                            q
                        }
                        _ => unreachable!(),
                    };
                let acc_scale = in_qp.scale as f64 * weight_qp.scale as f64;
                let multiplier = decompose_multiplier(acc_scale / out_qp.scale as f64)?;
                (
                    out_qp,
                    QuantizedTensors::Affine {
                        weights,
                        weight_qp,
                        bias: quantize_bias(&p.bias, acc_scale),
                        multiplier,
                        fused_relu,
                    },
                )
            }
            LayerSpec::Lstm { .. } => {
                let out_qp = affine_params(cal.layers[i].min, cal.layers[i].max);
                let wr = range_of(&p.weights);
                let input_weight_qp = symmetric_params(wr.min, wr.max);
                let rr = range_of(&p.recurrent);
                let recurrent_qp = symmetric_params(rr.min, rr.max);
                let acc_scale = in_qp.scale as f64 * input_weight_qp.scale as f64;
                (
                    out_qp,
                    QuantizedTensors::Lstm {
                        input_weights: quantize_tensor(&p.weights, input_weight_qp),
                        input_weight_qp,
                        recurrent: quantize_tensor(&p.recurrent, recurrent_qp),
                        recurrent_qp,
                        bias: quantize_bias(&p.bias, acc_scale),
                    },
                )
            }
            LayerSpec::Softmax => (SOFTMAX_OUTPUT, QuantizedTensors::None),
            // shape-only and elementwise layers keep the incoming parameters
            LayerSpec::ReLU
            | LayerSpec::Dropout { .. }
            | LayerSpec::AvgPool1D { .. }
            | LayerSpec::Flatten => (in_qp, QuantizedTensors::None),
        };
        layers.push(QuantizedLayer {
            spec: *spec,
            output_qp,
            tensors,
        });
        in_qp = output_qp;
    }
    let model = QuantizedModel {
        input_shape: graph.input_shape(),
        num_classes: graph.num_classes(),
        input_qp,
        layers,
    };
    model.validate()?;
    Ok(model)
}
