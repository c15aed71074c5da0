//! Layer-graph model representation.
//!
//! A [`ModelGraph`] is a straight-line sequence of layers with float32
//! parameters. Activations between layers are `(steps, channels)` matrices;
//! dense layers expect a single step, which is what `Flatten` and a
//! non-sequence LSTM produce.

mod builders;
pub mod format;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use builders::{
    build_architecture, build_deep_conv_lstm, build_mc_cnn, Architecture, DeepConvLstmConfig,
    FilterLevel, McCnnConfig,
};

/// Activation shape: time steps by channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub steps: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(steps: usize, channels: usize) -> Self {
        Self { steps, channels }
    }

    pub const fn len(&self) -> usize {
        self.steps * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Numeric representation a model is stored and executed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Precision {
    Float32,
    Int8Full,
}

impl Precision {
    /// Bytes per stored activation element.
    pub const fn activation_bytes(self) -> usize {
        match self {
            Precision::Float32 => 4,
            Precision::Int8Full => 1,
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            Precision::Float32 => "float32",
            Precision::Int8Full => "int8",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("layer {layer}: time axis exhausted ({steps} steps left, layer needs {needed})")]
    ShapeUnderflow {
        layer: usize,
        steps: usize,
        needed: usize,
    },
    #[error("first conv filters ({0}) must be divisible by 4")]
    FilterRatio(usize),
    #[error("layer {layer}: expected input {expected}, got {got:?}")]
    Incompatible {
        layer: usize,
        expected: String,
        got: Shape,
    },
    #[error("layer {layer}: invalid attribute: {reason}")]
    InvalidAttribute { layer: usize, reason: &'static str },
    #[error("layer {layer}: parameter tensor `{tensor}` has {got} entries, expected {expected}")]
    ParamShape {
        layer: usize,
        tensor: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("graph must end in a softmax over num_classes ({0})")]
    BadHead(usize),
    #[error("graph has no layers")]
    Empty,
}

/// One layer of a model graph with its structural attributes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv1D {
        in_channels: usize,
        out_filters: usize,
        kernel: usize,
    },
    ReLU,
    Dropout {
        rate: f32,
    },
    AvgPool1D {
        pool: usize,
    },
    Flatten,
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    /// Gate order in the packed weights is input, forget, cell, output.
    Lstm {
        in_dim: usize,
        hidden: usize,
        /// Emit the whole hidden sequence instead of only the last step.
        return_sequences: bool,
    },
    Softmax,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1D { .. } => "conv1d",
            LayerSpec::ReLU => "relu",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::AvgPool1D { .. } => "avgpool1d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Whether the layer owns trainable tensors.
    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv1D { .. } | LayerSpec::Dense { .. } | LayerSpec::Lstm { .. }
        )
    }

    fn validate_attrs(&self, layer: usize) -> Result<(), GraphError> {
        let bad = |reason| Err(GraphError::InvalidAttribute { layer, reason });
        match *self {
            LayerSpec::Conv1D {
                in_channels,
                out_filters,
                kernel,
            } => {
                if kernel == 0 {
                    return bad("kernel must be >= 1");
                }
                if out_filters == 0 || in_channels == 0 {
                    return bad("conv channels must be >= 1");
                }
            }
            LayerSpec::AvgPool1D { pool: 0 } => return bad("pool must be >= 1"),
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                return bad("dropout rate must lie in [0, 1)")
            }
            LayerSpec::Dense { in_dim, out_dim } if in_dim == 0 || out_dim == 0 => {
                return bad("dense dims must be >= 1")
            }
            LayerSpec::Lstm { in_dim, hidden, .. } if in_dim == 0 || hidden == 0 => {
                return bad("lstm dims must be >= 1")
            }
            _ => {}
        }
        Ok(())
    }

    /// Output shape for the given input, checking compatibility.
    pub fn output_shape(&self, layer: usize, input: Shape) -> Result<Shape, GraphError> {
        self.validate_attrs(layer)?;
        let incompatible = |expected: String| GraphError::Incompatible {
            layer,
            expected,
            got: input,
        };
        match *self {
            LayerSpec::Conv1D {
                in_channels,
                out_filters,
                kernel,
            } => {
                if input.channels != in_channels {
                    return Err(incompatible(alloc::format!("{in_channels} channels")));
                }
                if input.steps < kernel {
                    return Err(GraphError::ShapeUnderflow {
                        layer,
                        steps: input.steps,
                        needed: kernel,
                    });
                }
                Ok(Shape::new(input.steps - kernel + 1, out_filters))
            }
            LayerSpec::ReLU | LayerSpec::Dropout { .. } => Ok(input),
            LayerSpec::AvgPool1D { pool } => {
                if input.steps < pool {
                    return Err(GraphError::ShapeUnderflow {
                        layer,
                        steps: input.steps,
                        needed: pool,
                    });
                }
                Ok(Shape::new(input.steps / pool, input.channels))
            }
            LayerSpec::Flatten => Ok(Shape::new(1, input.len())),
            LayerSpec::Dense { in_dim, out_dim } => {
                if input.steps != 1 || input.channels != in_dim {
                    return Err(incompatible(alloc::format!("(1, {in_dim})")));
                }
                Ok(Shape::new(1, out_dim))
            }
            LayerSpec::Lstm {
                in_dim,
                hidden,
                return_sequences,
            } => {
                if input.channels != in_dim {
                    return Err(incompatible(alloc::format!("{in_dim} channels")));
                }
                if input.steps == 0 {
                    return Err(GraphError::ShapeUnderflow {
                        layer,
                        steps: 0,
                        needed: 1,
                    });
                }
                let steps = if return_sequences { input.steps } else { 1 };
                Ok(Shape::new(steps, hidden))
            }
            LayerSpec::Softmax => {
                if input.steps != 1 {
                    return Err(incompatible(String::from("a single step")));
                }
                Ok(input)
            }
        }
    }

    /// Expected entry counts of (weights, recurrent, bias).
    pub fn param_shapes(&self) -> (usize, usize, usize) {
        match *self {
            LayerSpec::Conv1D {
                in_channels,
                out_filters,
                kernel,
            } => (in_channels * kernel * out_filters, 0, out_filters),
            LayerSpec::Dense { in_dim, out_dim } => (in_dim * out_dim, 0, out_dim),
            LayerSpec::Lstm { in_dim, hidden, .. } => {
                (in_dim * 4 * hidden, hidden * 4 * hidden, 4 * hidden)
            }
            _ => (0, 0, 0),
        }
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let (w, r, b) = self.param_shapes();
        w + r + b
    }

    /// Multiply-accumulate operations for one inference given the input shape.
    pub fn macs(&self, input: Shape) -> u64 {
        match *self {
            LayerSpec::Conv1D {
                in_channels,
                out_filters,
                kernel,
            } => {
                let out_steps = input.steps.saturating_sub(kernel) + 1;
                (out_steps * in_channels * kernel * out_filters) as u64
            }
            LayerSpec::Dense { in_dim, out_dim } => (in_dim * out_dim) as u64,
            LayerSpec::Lstm { in_dim, hidden, .. } => {
                (input.steps * 4 * (in_dim * hidden + hidden * hidden)) as u64
            }
            _ => 0,
        }
    }
}

/// Float parameters owned by one layer. Tensors a layer does not use are empty.
///
/// Layouts (row-major):
/// - Conv1D weights `[in_channels][kernel][out_filters]`
/// - Dense weights `[in_dim][out_dim]`
/// - LSTM input weights `[in_dim][4 * hidden]`, recurrent `[hidden][4 * hidden]`,
///   bias `[4 * hidden]`, gate blocks ordered input, forget, cell, output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f32>,
    pub recurrent: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LayerParams {
    pub fn zeros(spec: &LayerSpec) -> Self {
        let (w, r, b) = spec.param_shapes();
        Self {
            weights: vec![0.0; w],
            recurrent: vec![0.0; r],
            bias: vec![0.0; b],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.recurrent.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An immutable, validated model: layers, parameters and I/O shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    input_shape: Shape,
    num_classes: usize,
    layers: Vec<LayerSpec>,
    params: Vec<LayerParams>,
    shapes: Vec<Shape>,
}

impl ModelGraph {
    /// Validates shapes, parameter sizes and the softmax head.
    pub fn new(
        input_shape: Shape,
        num_classes: usize,
        layers: Vec<LayerSpec>,
        params: Vec<LayerParams>,
    ) -> Result<Self, GraphError> {
        let shapes = infer_shapes(input_shape, &layers)?;
        if params.len() != layers.len() {
            return Err(GraphError::ParamShape {
                layer: layers.len().min(params.len()),
                tensor: "layer list",
                expected: layers.len(),
                got: params.len(),
            });
        }
        for (i, (spec, p)) in layers.iter().zip(&params).enumerate() {
            let (w, r, b) = spec.param_shapes();
            for (tensor, expected, got) in [
                ("weights", w, p.weights.len()),
                ("recurrent", r, p.recurrent.len()),
                ("bias", b, p.bias.len()),
            ] {
                if expected != got {
                    return Err(GraphError::ParamShape {
                        layer: i,
                        tensor,
                        expected,
                        got,
                    });
                }
            }
        }
        match (layers.last(), shapes.last()) {
            (Some(LayerSpec::Softmax), Some(out)) if out.channels == num_classes => {}
            _ => return Err(GraphError::BadHead(num_classes)),
        }
        Ok(Self {
            input_shape,
            num_classes,
            layers,
            params,
            shapes,
        })
    }

    /// Builds a graph with fan-in scaled uniform (He) weights and zero biases.
    pub fn with_init(
        input_shape: Shape,
        num_classes: usize,
        layers: Vec<LayerSpec>,
        seed: u64,
    ) -> Result<Self, GraphError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layers.iter().map(|l| init_params(l, &mut rng)).collect();
        Self::new(input_shape, num_classes, layers, params)
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    /// Output shape of every layer, in order.
    pub fn output_shapes(&self) -> &[Shape] {
        &self.shapes
    }

    /// Input shape of layer `i`.
    pub fn layer_input_shape(&self, i: usize) -> Shape {
        if i == 0 {
            self.input_shape
        } else {
            self.shapes[i - 1]
        }
    }

    pub fn has_lstm(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Lstm { .. }))
    }

    /// Returns a copy with replaced parameters, re-validating sizes.
    pub fn with_params(&self, params: Vec<LayerParams>) -> Result<Self, GraphError> {
        Self::new(
            self.input_shape,
            self.num_classes,
            self.layers.clone(),
            params,
        )
    }

    /// Total multiply-accumulates per inference.
    pub fn mac_count(&self) -> u64 {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.macs(self.layer_input_shape(i)))
            .sum()
    }
}

fn infer_shapes(input: Shape, layers: &[LayerSpec]) -> Result<Vec<Shape>, GraphError> {
    if layers.is_empty() {
        return Err(GraphError::Empty);
    }
    if input.is_empty() {
        return Err(GraphError::ShapeUnderflow {
            layer: 0,
            steps: input.steps,
            needed: 1,
        });
    }
    let mut shapes = Vec::with_capacity(layers.len());
    let mut cur = input;
    for (i, l) in layers.iter().enumerate() {
        cur = l.output_shape(i, cur)?;
        shapes.push(cur);
    }
    Ok(shapes)
}

fn init_params(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> LayerParams {
    let mut p = LayerParams::zeros(spec);
    let (fan_in, fan_rec) = match *spec {
        LayerSpec::Conv1D {
            in_channels,
            kernel,
            ..
        } => (in_channels * kernel, 0),
        LayerSpec::Dense { in_dim, .. } => (in_dim, 0),
        LayerSpec::Lstm { in_dim, hidden, .. } => (in_dim, hidden),
        _ => return p,
    };
    let fill = |buf: &mut [f32], fan: usize, rng: &mut ChaCha8Rng| {
        let limit = Float::sqrt(6.0 / fan.max(1) as f32);
        for w in buf {
            *w = rng.gen_range(-limit..limit);
        }
    };
    fill(&mut p.weights, fan_in, rng);
    if fan_rec > 0 {
        fill(&mut p.recurrent, fan_rec, rng);
        // forget-gate bias of one keeps early gradients flowing through the cell
        if let LayerSpec::Lstm { hidden, .. } = *spec {
            p.bias[hidden..2 * hidden].fill(1.0);
        }
    }
    p
}

/// Per-layer trainable scalar counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub per_layer: Vec<usize>,
    pub total: usize,
    /// Scalars living in bias tensors.
    pub bias: usize,
}

pub fn param_count(graph: &ModelGraph) -> ParamCount {
    let per_layer: Vec<usize> = graph.layers.iter().map(LayerSpec::param_count).collect();
    let bias = graph.layers.iter().map(|l| l.param_shapes().2).sum();
    ParamCount {
        total: per_layer.iter().sum(),
        per_layer,
        bias,
    }
}

/// Exact size in bytes of the model file for `graph` at `precision`.
///
/// This is the length `format::serialize_graph` (float) or the serialized
/// quantized model (int8) produces; no serialization is performed.
pub fn model_size_bytes(graph: &ModelGraph, precision: Precision) -> usize {
    format::encoded_len(graph.layers(), precision)
}

/// Bytes taken by parameter payloads alone, excluding all framing.
pub fn payload_bytes(graph: &ModelGraph, precision: Precision) -> usize {
    let counts = param_count(graph);
    match precision {
        Precision::Float32 => 4 * counts.total,
        Precision::Int8Full => (counts.total - counts.bias) + 4 * counts.bias,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_graph(in_dim: usize, out_dim: usize) -> ModelGraph {
        ModelGraph::with_init(
            Shape::new(1, in_dim),
            out_dim,
            vec![LayerSpec::Dense { in_dim, out_dim }, LayerSpec::Softmax],
            1,
        )
        .unwrap()
    }

    #[test]
    fn dense_param_count() {
        assert_eq!(
            LayerSpec::Dense {
                in_dim: 10,
                out_dim: 15
            }
            .param_count(),
            165
        );
        assert_eq!(param_count(&dense_graph(10, 15)).total, 165);
    }

    #[test]
    fn conv_and_lstm_param_counts() {
        let conv = LayerSpec::Conv1D {
            in_channels: 23,
            out_filters: 400,
            kernel: 3,
        };
        assert_eq!(conv.param_count(), 28_000);
        let lstm = LayerSpec::Lstm {
            in_dim: 100,
            hidden: 64,
            return_sequences: true,
        };
        assert_eq!(lstm.param_count(), 42_240);
    }

    #[test]
    fn float_payload_is_four_bytes_per_param() {
        assert_eq!(payload_bytes(&dense_graph(10, 15), Precision::Float32), 660);
    }

    #[test]
    fn head_must_match_classes() {
        let err = ModelGraph::with_init(
            Shape::new(1, 4),
            15,
            vec![
                LayerSpec::Dense {
                    in_dim: 4,
                    out_dim: 3,
                },
                LayerSpec::Softmax,
            ],
            0,
        )
        .unwrap_err();
        assert_eq!(err, GraphError::BadHead(15));
    }

    #[test]
    fn adjacent_layers_must_agree() {
        let err = ModelGraph::with_init(
            Shape::new(8, 2),
            2,
            vec![
                LayerSpec::Conv1D {
                    in_channels: 3,
                    out_filters: 4,
                    kernel: 3,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    in_dim: 24,
                    out_dim: 2,
                },
                LayerSpec::Softmax,
            ],
            0,
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::Incompatible { layer: 0, .. }));
    }

    #[test]
    fn param_tensor_sizes_are_checked() {
        let layers = vec![
            LayerSpec::Dense {
                in_dim: 2,
                out_dim: 2,
            },
            LayerSpec::Softmax,
        ];
        let mut params = vec![LayerParams::zeros(&layers[0]), LayerParams::default()];
        params[0].bias.pop();
        let err = ModelGraph::new(Shape::new(1, 2), 2, layers, params).unwrap_err();
        assert!(matches!(err, GraphError::ParamShape { tensor: "bias", .. }));
    }

    #[test]
    fn zero_kernel_rejected() {
        let spec = LayerSpec::Conv1D {
            in_channels: 1,
            out_filters: 1,
            kernel: 0,
        };
        assert!(matches!(
            spec.output_shape(0, Shape::new(4, 1)),
            Err(GraphError::InvalidAttribute { .. })
        ));
    }

    #[test]
    fn init_is_seeded() {
        let a = dense_graph(6, 3);
        let b = dense_graph(6, 3);
        assert_eq!(a, b);
        assert!(a.params()[0].bias.iter().all(|&b| b == 0.0));
        let limit = (6.0f32 / 6.0).sqrt();
        assert!(a.params()[0].weights.iter().all(|w| w.abs() <= limit));
    }
}
