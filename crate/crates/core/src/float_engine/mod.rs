//! Float reference executor, trainer and gradient checker.

pub(crate) mod kernels;
mod train;

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::model_ir::{LayerSpec, ModelGraph, Shape};

pub use train::{
    grad_check, loss_and_gradients, train, EpochStats, GradCheckConfig, Optimizer, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Shape, got: Shape },
    #[error("tensor holds {got} values, shape needs {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("tensor contains a non-finite value")]
    NonFinite,
    #[error("layer `{0}` is not supported by the trainer")]
    UnsupportedLayer(&'static str),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
}

/// Row-major `(steps, channels)` matrix of finite f32 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    steps: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Tensor2D {
    pub fn new(steps: usize, channels: usize, data: Vec<f32>) -> Result<Self, EngineError> {
        if data.len() != steps * channels {
            return Err(EngineError::BadLength {
                expected: steps * channels,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::NonFinite);
        }
        Ok(Self {
            steps,
            channels,
            data,
        })
    }

    pub fn zeros(steps: usize, channels: usize) -> Self {
        Self {
            steps,
            channels,
            data: vec![0.0; steps * channels],
        }
    }

    pub fn from_fn(steps: usize, channels: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(steps * channels);
        for t in 0..steps {
            for c in 0..channels {
                data.push(f(t, c));
            }
        }
        Self {
            steps,
            channels,
            data,
        }
    }

    /// Builds from kernel output that is finite by construction.
    pub(crate) fn from_parts(shape: Shape, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), shape.len());
        Self {
            steps: shape.steps,
            channels: shape.channels,
            data,
        }
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.steps, self.channels)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, t: usize, c: usize) -> f32 {
        self.data[t * self.channels + c]
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    /// Applies `f` to every value; the result must stay finite.
    pub fn map_in_place(&mut self, mut f: impl FnMut(usize, f32) -> f32) {
        let ch = self.channels;
        for (i, v) in self.data.iter_mut().enumerate() {
            *v = f(i % ch, *v);
        }
    }
}

fn expect_shape(expected: Shape, got: Shape) -> Result<(), EngineError> {
    if expected == got {
        Ok(())
    } else {
        Err(EngineError::ShapeMismatch { expected, got })
    }
}

/// Valid 1D convolution. `weights` is `[in_channels][kernel][filters]`.
pub fn conv1d_forward(
    input: &Tensor2D,
    weights: &[f32],
    bias: &[f32],
    kernel: usize,
) -> Result<Tensor2D, EngineError> {
    let filters = bias.len();
    let expected_w = input.channels * kernel * filters;
    if weights.len() != expected_w {
        return Err(EngineError::BadLength {
            expected: expected_w,
            got: weights.len(),
        });
    }
    if kernel == 0 || input.steps < kernel {
        return Err(EngineError::ShapeMismatch {
            expected: Shape::new(kernel, input.channels),
            got: input.shape(),
        });
    }
    let shape = Shape::new(input.steps - kernel + 1, filters);
    let mut out = Vec::new();
    kernels::conv1d(&input.data, input.channels, weights, bias, kernel, &mut out);
    Ok(Tensor2D::from_parts(shape, out))
}

pub fn relu(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Non-overlapping mean pooling along time; trailing steps that do not fill a
/// window are dropped.
pub fn avg_pool1d(input: &Tensor2D, pool: usize) -> Result<Tensor2D, EngineError> {
    if pool == 0 || input.steps < pool {
        return Err(EngineError::ShapeMismatch {
            expected: Shape::new(pool.max(1), input.channels),
            got: input.shape(),
        });
    }
    let shape = Shape::new(input.steps / pool, input.channels);
    let mut out = Vec::new();
    kernels::avg_pool(&input.data, input.channels, pool, &mut out);
    Ok(Tensor2D::from_parts(shape, out))
}

/// Affine map `x · W + b` with `weights` laid out `[in][out]`.
pub fn dense_forward(
    input: &[f32],
    weights: &[f32],
    bias: &[f32],
) -> Result<Vec<f32>, EngineError> {
    if weights.len() != input.len() * bias.len() {
        return Err(EngineError::BadLength {
            expected: input.len() * bias.len(),
            got: weights.len(),
        });
    }
    let mut out = Vec::new();
    kernels::dense(input, weights, bias, &mut out);
    Ok(out)
}

/// Runs an LSTM over every step of `seq` and returns the hidden sequence.
pub fn lstm_forward(
    seq: &Tensor2D,
    input_weights: &[f32],
    recurrent: &[f32],
    bias: &[f32],
) -> Result<Tensor2D, EngineError> {
    let hidden = bias.len() / 4;
    if !bias.len().is_multiple_of(4)
        || input_weights.len() != seq.channels * 4 * hidden
        || recurrent.len() != hidden * 4 * hidden
    {
        return Err(EngineError::BadLength {
            expected: seq.channels * 4 * hidden,
            got: input_weights.len(),
        });
    }
    let out = kernels::lstm(
        &seq.data,
        seq.channels,
        input_weights,
        recurrent,
        bias,
        true,
    );
    Ok(Tensor2D::from_parts(Shape::new(seq.steps, hidden), out))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let mut out = logits.to_vec();
    kernels::softmax_in_place(&mut out);
    out
}

/// Runs one layer at inference time (dropout is the identity).
pub fn run_layer(
    graph: &ModelGraph,
    index: usize,
    input: &Tensor2D,
) -> Result<Tensor2D, EngineError> {
    expect_shape(graph.layer_input_shape(index), input.shape())?;
    let spec = graph.layers()[index];
    let p = &graph.params()[index];
    let out_shape = graph.output_shapes()[index];
    let x = &input.data;
    let data = match spec {
        LayerSpec::Conv1D { kernel, .. } => {
            let mut out = Vec::new();
            kernels::conv1d(x, input.channels, &p.weights, &p.bias, kernel, &mut out);
            out
        }
        LayerSpec::ReLU => relu(x),
        LayerSpec::Dropout { .. } | LayerSpec::Flatten => x.clone(),
        LayerSpec::AvgPool1D { pool } => {
            let mut out = Vec::new();
            kernels::avg_pool(x, input.channels, pool, &mut out);
            out
        }
        LayerSpec::Dense { .. } => {
            let mut out = Vec::new();
            kernels::dense(x, &p.weights, &p.bias, &mut out);
            out
        }
        LayerSpec::Lstm {
            return_sequences, ..
        } => kernels::lstm(
            x,
            input.channels,
            &p.weights,
            &p.recurrent,
            &p.bias,
            return_sequences,
        ),
        LayerSpec::Softmax => softmax(x),
    };
    Ok(Tensor2D::from_parts(out_shape, data))
}

/// Output of every layer, in order; the last entry holds the probabilities.
pub fn forward_trace(graph: &ModelGraph, window: &Tensor2D) -> Result<Vec<Tensor2D>, EngineError> {
    expect_shape(graph.input_shape(), window.shape())?;
    let mut outs: Vec<Tensor2D> = Vec::with_capacity(graph.layers().len());
    for i in 0..graph.layers().len() {
        let next = run_layer(graph, i, outs.last().unwrap_or(window))?;
        outs.push(next);
    }
    Ok(outs)
}

/// Class probabilities for one window.
pub fn forward(graph: &ModelGraph, window: &Tensor2D) -> Result<Vec<f32>, EngineError> {
    expect_shape(graph.input_shape(), window.shape())?;
    let mut cur: Option<Tensor2D> = None;
    for i in 0..graph.layers().len() {
        let next = run_layer(graph, i, cur.as_ref().unwrap_or(window))?;
        cur = Some(next);
    }
    Ok(cur.map(Tensor2D::into_data).unwrap_or_default())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
