//! Integer-only executor for [`QuantizedModel`].
//!
//! Conv and dense layers accumulate `(q_in - zp_in) * q_w` in 32 bits, add the
//! int32 bias, rescale with a fixed-point multiplier (64-bit product, rounding
//! shift, half away from zero), add the output zero point and saturate to
//! int8. LSTM layers keep int8 storage but run the cell in float.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::float_engine::{argmax, kernels, Tensor2D};
use crate::model_ir::{LayerSpec, Shape};
use crate::quantizer::{
    FixedPointMultiplier, QuantParams, QuantizedLayer, QuantizedModel, QuantizedTensors,
    SOFTMAX_OUTPUT,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Int8Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Shape, got: Shape },
    #[error("layer `{0}` does not carry the tensors this kernel needs")]
    WrongLayer(&'static str),
    #[error("tensor holds {got} values, shape needs {expected}")]
    BadLength { expected: usize, got: usize },
}

/// Int8 activation matrix with its quantization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor2D {
    pub shape: Shape,
    pub data: Vec<i8>,
    pub qp: QuantParams,
}

impl QTensor2D {
    pub fn new(shape: Shape, data: Vec<i8>, qp: QuantParams) -> Result<Self, Int8Error> {
        if data.len() != shape.len() {
            return Err(Int8Error::BadLength {
                expected: shape.len(),
                got: data.len(),
            });
        }
        Ok(Self { shape, data, qp })
    }

    pub fn quantize(x: &Tensor2D, qp: QuantParams) -> Self {
        Self {
            shape: x.shape(),
            data: x.data().iter().map(|&v| qp.quantize(v)).collect(),
            qp,
        }
    }

    pub fn dequantize(&self) -> Vec<f32> {
        self.data
            .iter()
            .map(|&q| self.qp.dequantize(q) as f32)
            .collect()
    }
}

/// `round(acc * multiplier)` with ties away from zero, saturated to i32.
pub fn requantize(acc: i32, m: FixedPointMultiplier) -> i32 {
    // |acc| < 2^31 and mantissa < 2^31, so the product fits in 62 bits
    let prod = acc as i64 * m.mantissa as i64;
    let shift = 31 - m.exponent;
    let scaled = if shift >= 63 {
        0
    } else if shift > 0 {
        // floor((p + half - [p < 0]) / 2^shift) rounds ties away from zero
        (prod + (1i64 << (shift - 1)) - (prod < 0) as i64) >> shift
    } else {
        return ((prod as i128) << (-shift).min(64)).clamp(i32::MIN as i128, i32::MAX as i128)
            as i32;
    };
    scaled.clamp(i32::MIN as i64, i32::MAX as i64) as i32
}

/// Integer division rounding half away from zero.
fn div_round(n: i32, d: i32) -> i32 {
    let q = (n.abs() + d / 2) / d;
    if n < 0 {
        -q
    } else {
        q
    }
}

const LANES: usize = 8;
/// Outputs computed per pass over one input patch.
const BLOCK: usize = 4;

fn padded(len: usize) -> usize {
    len.div_ceil(LANES) * LANES
}

/// Dot products of `x` with four consecutive `row_len` rows of `w`.
#[cfg(target_arch = "x86_64")]
#[inline]
fn dot4(x: &[i16], w: &[i16], row_len: usize) -> [i32; BLOCK] {
    use core::arch::x86_64::*;
    assert!(x.len() >= row_len && w.len() >= BLOCK * row_len && row_len.is_multiple_of(LANES));
    // SAFETY: SSE2 is part of the x86_64 baseline; [i16; 8] and __m128i
    // have the same size and every bit pattern is valid for both.
    unsafe {
        let mut acc = [_mm_setzero_si128(); BLOCK];
        let xs = x[..row_len].as_chunks::<LANES>().0;
        let rows: [&[[i16; LANES]]; BLOCK] =
            core::array::from_fn(|b| w[b * row_len..(b + 1) * row_len].as_chunks::<LANES>().0);
        for (j, &xc) in xs.iter().enumerate() {
            let xv: __m128i = core::mem::transmute(xc);
            for (a, r) in acc.iter_mut().zip(&rows) {
                let wv: __m128i = core::mem::transmute(r[j]);
                *a = _mm_add_epi32(*a, _mm_madd_epi16(xv, wv));
            }
        }
        let mut out = [0i32; BLOCK];
        for (o, a) in out.iter_mut().zip(acc) {
            let hi = _mm_shuffle_epi32(a, 0b01_00_11_10);
            let s = _mm_add_epi32(a, hi);
            let s = _mm_add_epi32(s, _mm_shuffle_epi32(s, 0b10_11_00_01));
            *o = _mm_cvtsi128_si32(s);
        }
        out
    }
}

#[cfg(not(target_arch = "x86_64"))]
#[inline]
fn dot4(x: &[i16], w: &[i16], row_len: usize) -> [i32; BLOCK] {
    core::array::from_fn(|b| {
        x[..row_len]
            .iter()
            .zip(&w[b * row_len..(b + 1) * row_len])
            .map(|(&a, &c)| a as i32 * c as i32)
            .sum()
    })
}

/// Adds the output zero point and clamps, counting range saturations.
#[inline]
fn finish(acc: i32, m: FixedPointMultiplier, zp: i8, relu: bool, saturated: &mut u64) -> i8 {
    let v = requantize(acc, m).saturating_add(zp as i32);
    let lo = if relu { zp as i32 } else { -128 };
    // values under a fused ReLU's floor are activations, not overflow
    if v > 127 || (!relu && v < -128) {
        *saturated += 1;
    }
    v.clamp(lo, 127) as i8
}

/// Per-layer constants derived once from the model.
#[derive(Debug, Clone)]
enum Prepared {
    None,
    Affine {
        /// Σ of each output's weights, folding the input zero point out of the loop.
        weight_sums: Vec<i32>,
        /// Weight rows widened to i16, zero-padded to a multiple of
        /// [`LANES`], with zero rows up to a multiple of [`BLOCK`].
        rows: Vec<i16>,
        row_len: usize,
    },
    Lstm {
        w_in: Vec<f32>,
        w_rec: Vec<f32>,
        bias: Vec<f32>,
    },
}

fn prepare(layer: &QuantizedLayer, in_qp: QuantParams) -> Prepared {
    match (&layer.spec, &layer.tensors) {
        (_, QuantizedTensors::Affine { weights, bias, .. }) => {
            let per = (weights.len() / bias.len().max(1)).max(1);
            let row_len = padded(per);
            let mut rows = vec![0i16; row_len * bias.len().div_ceil(BLOCK) * BLOCK];
            for (dst, src) in rows.chunks_exact_mut(row_len).zip(weights.chunks(per)) {
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v as i16;
                }
            }
            Prepared::Affine {
                weight_sums: weights
                    .chunks(per)
                    .map(|w| w.iter().map(|&v| v as i32).sum())
                    .collect(),
                rows,
                row_len,
            }
        }
        (
            _,
            QuantizedTensors::Lstm {
                input_weights,
                input_weight_qp,
                recurrent,
                recurrent_qp,
                bias,
            },
        ) => {
            let bias_scale = in_qp.scale as f64 * input_weight_qp.scale as f64;
            Prepared::Lstm {
                w_in: input_weights
                    .iter()
                    .map(|&q| input_weight_qp.dequantize(q) as f32)
                    .collect(),
                w_rec: recurrent
                    .iter()
                    .map(|&q| recurrent_qp.dequantize(q) as f32)
                    .collect(),
                bias: bias
                    .iter()
                    .map(|&b| (b as f64 * bias_scale) as f32)
                    .collect(),
            }
        }
        _ => Prepared::None,
    }
}

/// Executes one layer from `input` into `out`.
#[allow(clippy::too_many_arguments)]
fn exec_layer(
    layer: &QuantizedLayer,
    prepared: &Prepared,
    in_shape: Shape,
    in_qp: QuantParams,
    input: &[i8],
    out: &mut Vec<i8>,
    saturated: &mut u64,
    lstm_scratch: &mut Vec<f32>,
) {
    out.clear();
    let zp_in = in_qp.zero_point as i32;
    let out_qp = layer.output_qp;
    match (layer.spec, &layer.tensors, prepared) {
        (
            LayerSpec::Conv1D {
                in_channels,
                out_filters,
                kernel,
            },
            QuantizedTensors::Affine {
                bias,
                multiplier,
                fused_relu,
                ..
            },
            Prepared::Affine {
                weight_sums,
                rows,
                row_len,
            },
        ) => {
            let span = kernel * in_channels;
            let out_steps = in_shape.steps + 1 - kernel;
            out.reserve(out_steps * out_filters);
            let mut patch = vec![0i16; *row_len];
            for t in 0..out_steps {
                // rows t..t+kernel are contiguous in the row-major input
                let src = &input[t * in_channels..t * in_channels + span];
                for (d, &v) in patch.iter_mut().zip(src) {
                    *d = v as i16;
                }
                for f0 in (0..out_filters).step_by(BLOCK) {
                    let raw = dot4(&patch, &rows[f0 * row_len..], *row_len);
                    for (f, r) in (f0..out_filters.min(f0 + BLOCK)).zip(raw) {
                        let acc = (r - zp_in * weight_sums[f]).saturating_add(bias[f]);
                        out.push(finish(
                            acc,
                            *multiplier,
                            out_qp.zero_point,
                            *fused_relu,
                            saturated,
                        ));
                    }
                }
            }
        }
        (
            LayerSpec::Dense { in_dim, out_dim },
            QuantizedTensors::Affine {
                bias,
                multiplier,
                fused_relu,
                ..
            },
            Prepared::Affine {
                weight_sums,
                rows,
                row_len,
            },
        ) => {
            out.reserve(out_dim);
            let mut x = vec![0i16; *row_len];
            for (d, &v) in x.iter_mut().zip(&input[..in_dim]) {
                *d = v as i16;
            }
            for o0 in (0..out_dim).step_by(BLOCK) {
                let raw = dot4(&x, &rows[o0 * row_len..], *row_len);
                for (o, r) in (o0..out_dim.min(o0 + BLOCK)).zip(raw) {
                    let acc = (r - zp_in * weight_sums[o]).saturating_add(bias[o]);
                    out.push(finish(
                        acc,
                        *multiplier,
                        out_qp.zero_point,
                        *fused_relu,
                        saturated,
                    ));
                }
            }
        }
        (
            LayerSpec::Lstm {
                return_sequences, ..
            },
            _,
            Prepared::Lstm { w_in, w_rec, bias },
        ) => {
            lstm_scratch.clear();
            lstm_scratch.extend(input.iter().map(|&q| in_qp.dequantize(q) as f32));
            let h = kernels::lstm(
                lstm_scratch,
                in_shape.channels,
                w_in,
                w_rec,
                bias,
                return_sequences,
            );
            out.extend(h.iter().map(|&v| out_qp.quantize(v)));
        }
        (LayerSpec::AvgPool1D { pool }, _, _) => {
            let ch = in_shape.channels;
            let out_steps = in_shape.steps / pool;
            out.reserve(out_steps * ch);
            for t in 0..out_steps {
                for c in 0..ch {
                    let sum: i32 = (0..pool)
                        .map(|j| input[(t * pool + j) * ch + c] as i32)
                        .sum();
                    out.push(div_round(sum, pool as i32).clamp(-128, 127) as i8);
                }
            }
        }
        (LayerSpec::ReLU, _, _) => {
            let zp = out_qp.zero_point;
            out.extend(input.iter().map(|&q| q.max(zp)));
        }
        (LayerSpec::Softmax, _, _) => {
            lstm_scratch.clear();
            lstm_scratch.extend(input.iter().map(|&q| in_qp.dequantize(q) as f32));
            kernels::softmax_in_place(lstm_scratch);
            out.extend(lstm_scratch.iter().map(|&p| out_qp.quantize(p)));
        }
        (LayerSpec::Dropout { .. } | LayerSpec::Flatten, _, _) => out.extend_from_slice(input),
        (spec, _, _) => unreachable!("validated model has consistent tensors for {}", spec.name()),
    }
}

fn check_kind(layer: &QuantizedLayer, want: fn(&LayerSpec) -> bool) -> Result<(), Int8Error> {
    if want(&layer.spec) {
        Ok(())
    } else {
        Err(Int8Error::WrongLayer(layer.spec.name()))
    }
}

fn run_single(layer: &QuantizedLayer, input: &QTensor2D) -> Result<QTensor2D, Int8Error> {
    let mut probe = input.shape;
    let out_shape =
        layer
            .spec
            .output_shape(0, input.shape)
            .map_err(|_| Int8Error::ShapeMismatch {
                expected: {
                    if let LayerSpec::Conv1D { in_channels, .. } = layer.spec {
                        probe.channels = in_channels;
                    }
                    probe
                },
                got: input.shape,
            })?;
    let prepared = prepare(layer, input.qp);
    let mut out = Vec::new();
    let mut sat = 0;
    let mut scratch = Vec::new();
    exec_layer(
        layer,
        &prepared,
        input.shape,
        input.qp,
        &input.data,
        &mut out,
        &mut sat,
        &mut scratch,
    );
    Ok(QTensor2D {
        shape: out_shape,
        data: out,
        qp: layer.output_qp,
    })
}

pub fn conv1d_int8(input: &QTensor2D, layer: &QuantizedLayer) -> Result<QTensor2D, Int8Error> {
    check_kind(layer, |s| matches!(s, LayerSpec::Conv1D { .. }))?;
    run_single(layer, input)
}

/// Dense layer on a single-step input.
pub fn dense_int8(input: &QTensor2D, layer: &QuantizedLayer) -> Result<QTensor2D, Int8Error> {
    check_kind(layer, |s| matches!(s, LayerSpec::Dense { .. }))?;
    run_single(layer, input)
}

/// Integer mean over non-overlapping windows; quantization unchanged.
pub fn avg_pool1d_int8(input: &QTensor2D, pool: usize) -> Result<QTensor2D, Int8Error> {
    let layer = QuantizedLayer {
        spec: LayerSpec::AvgPool1D { pool },
        output_qp: input.qp,
        tensors: QuantizedTensors::None,
    };
    run_single(&layer, input)
}

pub fn lstm_hybrid(input: &QTensor2D, layer: &QuantizedLayer) -> Result<QTensor2D, Int8Error> {
    check_kind(layer, |s| matches!(s, LayerSpec::Lstm { .. }))?;
    run_single(layer, input)
}

/// Softmax onto the fixed `(1/256, -128)` output grid.
pub fn softmax_int8(logits: &QTensor2D) -> QTensor2D {
    let layer = QuantizedLayer {
        spec: LayerSpec::Softmax,
        output_qp: SOFTMAX_OUTPUT,
        tensors: QuantizedTensors::None,
    };
    let single = QTensor2D {
        shape: Shape::new(1, logits.data.len()),
        data: logits.data.clone(),
        qp: logits.qp,
    };
    run_single(&layer, &single).expect("softmax accepts any single-step input")
}

/// Runs one layer of `model` on an int8 input tensor.
pub fn run_layer(
    model: &QuantizedModel,
    index: usize,
    input: &QTensor2D,
) -> Result<QTensor2D, Int8Error> {
    run_single(&model.layers[index], input)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f32>,
    pub class: usize,
}

/// Reusable executor with scratch buffers for one inference at a time.
pub struct Int8Executor<'m> {
    model: &'m QuantizedModel,
    shapes: Vec<Shape>,
    prepared: Vec<Prepared>,
    a: Vec<i8>,
    b: Vec<i8>,
    float_scratch: Vec<f32>,
    saturated: u64,
}

impl<'m> Int8Executor<'m> {
    pub fn new(model: &'m QuantizedModel) -> Self {
        let shapes = model.output_shapes();
        let mut in_qp = model.input_qp;
        let mut prepared = Vec::with_capacity(model.layers.len());
        for layer in &model.layers {
            prepared.push(prepare(layer, in_qp));
            in_qp = layer.output_qp;
        }
        Self {
            model,
            shapes,
            prepared,
            a: Vec::new(),
            b: Vec::new(),
            float_scratch: Vec::new(),
            saturated: 0,
        }
    }

    /// Out-of-range values clamped so far, across all runs of this executor.
    pub fn saturation_events(&self) -> u64 {
        self.saturated
    }

    pub fn quantize_input(&self, window: &Tensor2D) -> Result<Vec<i8>, Int8Error> {
        if window.shape() != self.model.input_shape {
            return Err(Int8Error::ShapeMismatch {
                expected: self.model.input_shape,
                got: window.shape(),
            });
        }
        let qp = self.model.input_qp;
        Ok(window.data().iter().map(|&v| qp.quantize(v)).collect())
    }

    /// Runs all layers on an already-quantized input; returns the int8 softmax output.
    pub fn run_prequantized(&mut self, input: &[i8]) -> Result<&[i8], Int8Error> {
        if input.len() != self.model.input_shape.len() {
            return Err(Int8Error::BadLength {
                expected: self.model.input_shape.len(),
                got: input.len(),
            });
        }
        self.a.clear();
        self.a.extend_from_slice(input);
        let mut in_shape = self.model.input_shape;
        let mut in_qp = self.model.input_qp;
        for (i, layer) in self.model.layers.iter().enumerate() {
            exec_layer(
                layer,
                &self.prepared[i],
                in_shape,
                in_qp,
                &self.a,
                &mut self.b,
                &mut self.saturated,
                &mut self.float_scratch,
            );
            core::mem::swap(&mut self.a, &mut self.b);
            in_shape = self.shapes[i];
            in_qp = layer.output_qp;
        }
        Ok(&self.a)
    }

    pub fn run(&mut self, window: &Tensor2D) -> Result<Prediction, Int8Error> {
        let q = self.quantize_input(window)?;
        let out_qp = self
            .model
            .layers
            .last()
            .map(|l| l.output_qp)
            .unwrap_or(SOFTMAX_OUTPUT);
        let out = self.run_prequantized(&q)?;
        let probabilities: Vec<f32> = out.iter().map(|&v| out_qp.dequantize(v) as f32).collect();
        // argmax over the integer codes equals argmax over the probabilities
        let class = argmax(&probabilities);
        Ok(Prediction {
            probabilities,
            class,
        })
    }

    /// Int8 output of every layer for one window.
    pub fn trace(&mut self, window: &Tensor2D) -> Result<Vec<QTensor2D>, Int8Error> {
        let mut cur = QTensor2D {
            shape: self.model.input_shape,
            data: self.quantize_input(window)?,
            qp: self.model.input_qp,
        };
        let mut outs = Vec::with_capacity(self.model.layers.len());
        for (i, layer) in self.model.layers.iter().enumerate() {
            let mut out = Vec::new();
            exec_layer(
                layer,
                &self.prepared[i],
                cur.shape,
                cur.qp,
                &cur.data,
                &mut out,
                &mut self.saturated,
                &mut self.float_scratch,
            );
            cur = QTensor2D {
                shape: self.shapes[i],
                data: out,
                qp: layer.output_qp,
            };
            outs.push(cur.clone());
        }
        Ok(outs)
    }
}

/// Quantizes `window`, runs the integer model and dequantizes the output.
pub fn run_quantized(model: &QuantizedModel, window: &Tensor2D) -> Result<Prediction, Int8Error> {
    Int8Executor::new(model).run(window)
}
