//! Binary model file (`.thar`).
//!
//! Little-endian throughout. Layout:
//!
//! ```text
//! header   magic "THAR" | version u32 (=1) | precision u8 (0 float32, 1 int8)
//!          | num_classes u32 | input steps u32 | input channels u32 | layer count u32
//! int8     input quant params (scale f32, zero point i8)
//! layers   kind u8 | attributes | payload
//! ```
//!
//! Kinds and attributes: 0 conv1d (in u32, filters u32, kernel u32), 1 relu,
//! 2 dropout (rate f32), 3 avgpool1d (pool u32), 4 flatten, 5 dense (in u32,
//! out u32), 6 lstm (in u32, hidden u32, return_sequences u8), 7 softmax.
//!
//! Every tensor is a u32 element count followed by the elements. Float
//! payloads carry the layer's weight, [recurrent,] bias tensors as f32. Int8
//! payloads carry the output quant params of every layer, then for conv/dense
//! the int8 weights (filter-major `[out][kernel][in]` / `[out][in]`), their
//! quant params, the int32 bias, the requantization multiplier (mantissa
//! i32, exponent i32) and a fused-relu flag u8; for lstm the int8 input
//! weights and quant params, int8 recurrent weights and quant params, and
//! the int32 bias.

use alloc::vec::Vec;

use thiserror::Error;

use super::{GraphError, LayerParams, LayerSpec, ModelGraph, Precision, Shape};
use crate::quantizer::{
    FixedPointMultiplier, QuantParams, QuantizedLayer, QuantizedModel, QuantizedTensors,
};

pub const MAGIC: [u8; 4] = *b"THAR";
pub const VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 4 + 4 + 4;
const QP_LEN: usize = 5;
const MULTIPLIER_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("not a model file (bad magic or header field: {0})")]
    CorruptHeader(&'static str),
    #[error("unsupported model file version {found} (expected {VERSION})")]
    VersionMismatch { found: u32 },
    #[error("model file truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid model: {0}")]
    Invalid(#[from] GraphError),
}

/// A decoded model file.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Float(ModelGraph),
    Int8(QuantizedModel),
}

impl ModelFile {
    pub fn precision(&self) -> Precision {
        match self {
            ModelFile::Float(_) => Precision::Float32,
            ModelFile::Int8(_) => Precision::Int8Full,
        }
    }

    pub fn input_shape(&self) -> Shape {
        match self {
            ModelFile::Float(g) => g.input_shape(),
            ModelFile::Int8(q) => q.input_shape,
        }
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        match self {
            ModelFile::Float(g) => g.layers().to_vec(),
            ModelFile::Int8(q) => q.layers.iter().map(|l| l.spec).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            ModelFile::Float(g) => serialize_graph(g),
            ModelFile::Int8(q) => serialize_quantized(q),
        }
    }
}

fn kind_tag(spec: &LayerSpec) -> u8 {
    match spec {
        LayerSpec::Conv1D { .. } => 0,
        LayerSpec::ReLU => 1,
        LayerSpec::Dropout { .. } => 2,
        LayerSpec::AvgPool1D { .. } => 3,
        LayerSpec::Flatten => 4,
        LayerSpec::Dense { .. } => 5,
        LayerSpec::Lstm { .. } => 6,
        LayerSpec::Softmax => 7,
    }
}

fn attr_len(spec: &LayerSpec) -> usize {
    match spec {
        LayerSpec::Conv1D { .. } => 12,
        LayerSpec::Dropout { .. } | LayerSpec::AvgPool1D { .. } => 4,
        LayerSpec::Dense { .. } => 8,
        LayerSpec::Lstm { .. } => 9,
        LayerSpec::ReLU | LayerSpec::Flatten | LayerSpec::Softmax => 0,
    }
}

/// File length for a graph with these layers at `precision`.
pub(crate) fn encoded_len(layers: &[LayerSpec], precision: Precision) -> usize {
    let mut len = HEADER_LEN;
    if precision == Precision::Int8Full {
        len += QP_LEN;
    }
    for spec in layers {
        len += 1 + attr_len(spec);
        let (w, r, b) = spec.param_shapes();
        let is_lstm = matches!(spec, LayerSpec::Lstm { .. });
        match precision {
            Precision::Float32 => {
                if spec.has_params() {
                    len += 4 + 4 * w + 4 + 4 * b;
                    if is_lstm {
                        len += 4 + 4 * r;
                    }
                }
            }
            Precision::Int8Full => {
                len += QP_LEN;
                if is_lstm {
                    len += (4 + w + QP_LEN) + (4 + r + QP_LEN) + (4 + 4 * b);
                } else if spec.has_params() {
                    len += (4 + w + QP_LEN) + (4 + 4 * b) + MULTIPLIER_LEN + 1;
                }
            }
        }
    }
    len
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn with_capacity(n: usize) -> Self {
        Self {
            buf: Vec::with_capacity(n),
        }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("dimension exceeds u32");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn qp(&mut self, qp: QuantParams) {
        self.f32(qp.scale);
        self.buf.push(qp.zero_point as u8);
    }

    fn f32s(&mut self, data: &[f32]) {
        self.u32(data.len());
        for &v in data {
            self.f32(v);
        }
    }

    fn i8s(&mut self, data: &[i8]) {
        self.u32(data.len());
        self.buf.extend(data.iter().map(|&v| v as u8));
    }

    fn i32s(&mut self, data: &[i32]) {
        self.u32(data.len());
        for &v in data {
            self.i32(v);
        }
    }

    fn header(&mut self, precision: Precision, classes: usize, input: Shape, layers: usize) {
        self.buf.extend_from_slice(&MAGIC);
        self.buf.extend_from_slice(&VERSION.to_le_bytes());
        self.u8(match precision {
            Precision::Float32 => 0,
            Precision::Int8Full => 1,
        });
        self.u32(classes);
        self.u32(input.steps);
        self.u32(input.channels);
        self.u32(layers);
    }

    fn layer_spec(&mut self, spec: &LayerSpec) {
        self.u8(kind_tag(spec));
        match *spec {
            LayerSpec::Conv1D {
                in_channels,
                out_filters,
                kernel,
            } => {
                self.u32(in_channels);
                self.u32(out_filters);
                self.u32(kernel);
            }
            LayerSpec::Dropout { rate } => self.f32(rate),
            LayerSpec::AvgPool1D { pool } => self.u32(pool),
            LayerSpec::Dense { in_dim, out_dim } => {
                self.u32(in_dim);
                self.u32(out_dim);
            }
            LayerSpec::Lstm {
                in_dim,
                hidden,
                return_sequences,
            } => {
                self.u32(in_dim);
                self.u32(hidden);
                self.u8(return_sequences as u8);
            }
            LayerSpec::ReLU | LayerSpec::Flatten | LayerSpec::Softmax => {}
        }
    }
}

pub fn serialize_graph(graph: &ModelGraph) -> Vec<u8> {
    let mut w = Writer::with_capacity(encoded_len(graph.layers(), Precision::Float32));
    w.header(
        Precision::Float32,
        graph.num_classes(),
        graph.input_shape(),
        graph.layers().len(),
    );
    for (spec, p) in graph.layers().iter().zip(graph.params()) {
        w.layer_spec(spec);
        if spec.has_params() {
            w.f32s(&p.weights);
            if matches!(spec, LayerSpec::Lstm { .. }) {
                w.f32s(&p.recurrent);
            }
            w.f32s(&p.bias);
        }
    }
    w.buf
}

pub fn serialize_quantized(model: &QuantizedModel) -> Vec<u8> {
    let specs: Vec<LayerSpec> = model.layers.iter().map(|l| l.spec).collect();
    let mut w = Writer::with_capacity(encoded_len(&specs, Precision::Int8Full));
    w.header(
        Precision::Int8Full,
        model.num_classes,
        model.input_shape,
        model.layers.len(),
    );
    w.qp(model.input_qp);
    for layer in &model.layers {
        w.layer_spec(&layer.spec);
        w.qp(layer.output_qp);
        match &layer.tensors {
            QuantizedTensors::None => {}
            QuantizedTensors::Affine {
                weights,
                weight_qp,
                bias,
                multiplier,
                fused_relu,
            } => {
                w.i8s(weights);
                w.qp(*weight_qp);
                w.i32s(bias);
                w.i32(multiplier.mantissa);
                w.i32(multiplier.exponent);
                w.u8(*fused_relu as u8);
            }
            QuantizedTensors::Lstm {
                input_weights,
                input_weight_qp,
                recurrent,
                recurrent_qp,
                bias,
            } => {
                w.i8s(input_weights);
                w.qp(*input_weight_qp);
                w.i8s(recurrent);
                w.qp(*recurrent_qp);
                w.i32s(bias);
            }
        }
    }
    w.buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(FormatError::Truncated {
                offset: self.bytes.len(),
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        let mut out = [0; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, FormatError> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }

    fn i32(&mut self) -> Result<i32, FormatError> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn qp(&mut self) -> Result<QuantParams, FormatError> {
        let scale = self.f32()?;
        let zero_point = self.u8()? as i8;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(FormatError::CorruptHeader("quantization scale"));
        }
        Ok(QuantParams { scale, zero_point })
    }

    /// Element count, checked against the bytes actually remaining.
    fn count(&mut self, elem: usize) -> Result<usize, FormatError> {
        let n = self.u32()?;
        if n.saturating_mul(elem) > self.bytes.len() - self.pos {
            return Err(FormatError::Truncated {
                offset: self.bytes.len(),
            });
        }
        Ok(n)
    }

    fn f32s(&mut self) -> Result<Vec<f32>, FormatError> {
        let n = self.count(4)?;
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn i8s(&mut self) -> Result<Vec<i8>, FormatError> {
        let n = self.count(1)?;
        Ok(self.take(n)?.iter().map(|&b| b as i8).collect())
    }

    fn i32s(&mut self) -> Result<Vec<i32>, FormatError> {
        let n = self.count(4)?;
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn layer_spec(&mut self) -> Result<LayerSpec, FormatError> {
        Ok(match self.u8()? {
            0 => LayerSpec::Conv1D {
                in_channels: self.u32()?,
                out_filters: self.u32()?,
                kernel: self.u32()?,
            },
            1 => LayerSpec::ReLU,
            2 => LayerSpec::Dropout { rate: self.f32()? },
            3 => LayerSpec::AvgPool1D { pool: self.u32()? },
            4 => LayerSpec::Flatten,
            5 => LayerSpec::Dense {
                in_dim: self.u32()?,
                out_dim: self.u32()?,
            },
            6 => LayerSpec::Lstm {
                in_dim: self.u32()?,
                hidden: self.u32()?,
                return_sequences: match self.u8()? {
                    0 => false,
                    1 => true,
                    _ => return Err(FormatError::CorruptHeader("lstm flag")),
                },
            },
            7 => LayerSpec::Softmax,
            _ => return Err(FormatError::CorruptHeader("layer kind")),
        })
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<ModelFile, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 4 || r.array::<4>()? != MAGIC {
        return Err(FormatError::CorruptHeader("magic"));
    }
    let version = u32::from_le_bytes(r.array()?);
    if version != VERSION {
        return Err(FormatError::VersionMismatch { found: version });
    }
    let precision = match r.u8()? {
        0 => Precision::Float32,
        1 => Precision::Int8Full,
        _ => return Err(FormatError::CorruptHeader("precision")),
    };
    let num_classes = r.u32()?;
    let input_shape = Shape::new(r.u32()?, r.u32()?);
    let layer_count = r.u32()?;
    // every layer takes at least one byte; guards absurd counts
    if layer_count > bytes.len() {
        return Err(FormatError::Truncated {
            offset: bytes.len(),
        });
    }

    let file = match precision {
        Precision::Float32 => {
            let mut layers = Vec::with_capacity(layer_count);
            let mut params = Vec::with_capacity(layer_count);
            for _ in 0..layer_count {
                let spec = r.layer_spec()?;
                let mut p = LayerParams::default();
                if spec.has_params() {
                    p.weights = r.f32s()?;
                    if matches!(spec, LayerSpec::Lstm { .. }) {
                        p.recurrent = r.f32s()?;
                    }
                    p.bias = r.f32s()?;
                }
                layers.push(spec);
                params.push(p);
            }
            ModelFile::Float(ModelGraph::new(input_shape, num_classes, layers, params)?)
        }
        Precision::Int8Full => {
            let input_qp = r.qp()?;
            let mut layers = Vec::with_capacity(layer_count);
            for _ in 0..layer_count {
                let spec = r.layer_spec()?;
                let output_qp = r.qp()?;
                let tensors = match spec {
                    LayerSpec::Lstm { .. } => QuantizedTensors::Lstm {
                        input_weights: r.i8s()?,
                        input_weight_qp: r.qp()?,
                        recurrent: r.i8s()?,
                        recurrent_qp: r.qp()?,
                        bias: r.i32s()?,
                    },
                    LayerSpec::Conv1D { .. } | LayerSpec::Dense { .. } => {
                        QuantizedTensors::Affine {
                            weights: r.i8s()?,
                            weight_qp: r.qp()?,
                            bias: r.i32s()?,
                            multiplier: FixedPointMultiplier {
                                mantissa: r.i32()?,
                                exponent: r.i32()?,
                            },
                            fused_relu: match r.u8()? {
                                0 => false,
                                1 => true,
                                _ => return Err(FormatError::CorruptHeader("relu flag")),
                            },
                        }
                    }
                    _ => QuantizedTensors::None,
                };
                layers.push(QuantizedLayer {
                    spec,
                    output_qp,
                    tensors,
                });
            }
            let model = QuantizedModel {
                input_shape,
                num_classes,
                input_qp,
                layers,
            };
            model.validate()?;
            ModelFile::Int8(model)
        }
    };
    if r.pos != bytes.len() {
        return Err(FormatError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_ir::{
        build_deep_conv_lstm, build_mc_cnn, model_size_bytes, DeepConvLstmConfig, McCnnConfig,
    };

    fn small() -> ModelGraph {
        let mut cfg = McCnnConfig::new(3, 8);
        cfg.window_len = 10;
        cfg.dense_width = 6;
        cfg.seed = 5;
        build_mc_cnn(&cfg).unwrap()
    }

    fn bits(g: &ModelGraph) -> Vec<u32> {
        g.params()
            .iter()
            .flat_map(|p| p.weights.iter().chain(&p.recurrent).chain(&p.bias))
            .map(|v| v.to_bits())
            .collect()
    }

    #[test]
    fn float_round_trip_is_bit_exact() {
        let mut cfg = DeepConvLstmConfig::new(4, 6);
        cfg.hidden = 5;
        cfg.window_len = 12;
        for g in [small(), build_deep_conv_lstm(&cfg).unwrap()] {
            let bytes = serialize_graph(&g);
            assert_eq!(bytes.len(), model_size_bytes(&g, Precision::Float32));
            let ModelFile::Float(back) = deserialize(&bytes).unwrap() else {
                panic!("precision changed");
            };
            assert_eq!(back.layers(), g.layers());
            assert_eq!(bits(&back), bits(&g));
        }
    }

    #[test]
    fn wrong_magic_is_corrupt_header() {
        let mut bytes = serialize_graph(&small());
        bytes[0] = b'X';
        assert_eq!(
            deserialize(&bytes).unwrap_err(),
            FormatError::CorruptHeader("magic")
        );
    }

    #[test]
    fn other_version_rejected() {
        let mut bytes = serialize_graph(&small());
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert_eq!(
            deserialize(&bytes).unwrap_err(),
            FormatError::VersionMismatch { found: 2 }
        );
    }

    #[test]
    fn truncation_mid_tensor_detected() {
        let bytes = serialize_graph(&small());
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(
            deserialize(cut).unwrap_err(),
            FormatError::Truncated { .. }
        ));
        assert!(matches!(
            deserialize(&bytes[..HEADER_LEN - 3]).unwrap_err(),
            FormatError::Truncated { .. }
        ));
    }

    #[test]
    fn trailing_garbage_rejected() {
        let mut bytes = serialize_graph(&small());
        bytes.push(0);
        assert_eq!(
            deserialize(&bytes).unwrap_err(),
            FormatError::TrailingBytes(1)
        );
    }
}
