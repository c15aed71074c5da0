use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernels;
use super::{argmax, forward, EngineError};
use crate::datapipe::WindowedSample;
use crate::model_ir::{LayerParams, LayerSpec, ModelGraph, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: Optimizer::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.epochs == 0 {
            return Err(EngineError::InvalidConfig("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(EngineError::InvalidConfig("batch size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(EngineError::InvalidConfig(
                "learning rate must lie in (0, 1)",
            ));
        }
        Ok(())
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's training samples.
    pub loss: f64,
    /// Running accuracy over the epoch, dropout active.
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

struct Tensors<T> {
    w: Vec<T>,
    b: Vec<T>,
}

/// Trainable copy of a graph in precision `T`.
struct Net<T> {
    layers: Vec<LayerSpec>,
    in_shapes: Vec<Shape>,
    params: Vec<Tensors<T>>,
}

/// Per-sample activations kept for the backward pass.
struct Trace<T> {
    /// `acts[i]` is the input of layer `i`; the last entry holds probabilities.
    acts: Vec<Vec<T>>,
    masks: Vec<Vec<T>>,
}

impl<T: Float> Net<T> {
    fn from_graph(graph: &ModelGraph) -> Result<Self, EngineError> {
        if let Some(l) = graph
            .layers()
            .iter()
            .find(|l| matches!(l, LayerSpec::Lstm { .. }))
        {
            return Err(EngineError::UnsupportedLayer(l.name()));
        }
        let last = graph.layers().len() - 1;
        if graph.layers()[..last].contains(&LayerSpec::Softmax) {
            return Err(EngineError::UnsupportedLayer("softmax"));
        }
        let cast = |v: &[f32]| v.iter().map(|&x| T::from(x).unwrap()).collect();
        Ok(Self {
            layers: graph.layers().to_vec(),
            in_shapes: (0..graph.layers().len())
                .map(|i| graph.layer_input_shape(i))
                .collect(),
            params: graph
                .params()
                .iter()
                .map(|p| Tensors {
                    w: cast(&p.weights),
                    b: cast(&p.bias),
                })
                .collect(),
        })
    }

    fn to_params(&self) -> Vec<LayerParams> {
        let cast = |v: &[T]| v.iter().map(|x| x.to_f32().unwrap()).collect();
        self.params
            .iter()
            .map(|p| LayerParams {
                weights: cast(&p.w),
                recurrent: Vec::new(),
                bias: cast(&p.b),
            })
            .collect()
    }

    fn zero_grads(&self) -> Vec<Tensors<T>> {
        self.params
            .iter()
            .map(|p| Tensors {
                w: vec![T::zero(); p.w.len()],
                b: vec![T::zero(); p.b.len()],
            })
            .collect()
    }

    fn new_trace(&self) -> Trace<T> {
        Trace {
            acts: (0..=self.layers.len()).map(|_| Vec::new()).collect(),
            masks: (0..self.layers.len()).map(|_| Vec::new()).collect(),
        }
    }

    /// Fills `trace` and returns the softmax input (logits) length-checked.
    fn forward(&self, input: &[T], mut dropout: Option<&mut ChaCha8Rng>, trace: &mut Trace<T>) {
        trace.acts[0].clear();
        trace.acts[0].extend_from_slice(input);
        for (i, spec) in self.layers.iter().enumerate() {
            let (head, tail) = trace.acts.split_at_mut(i + 1);
            let x = &head[i];
            let out = &mut tail[0];
            let p = &self.params[i];
            let ch = self.in_shapes[i].channels;
            match *spec {
                LayerSpec::Conv1D { kernel, .. } => kernels::conv1d(x, ch, &p.w, &p.b, kernel, out),
                LayerSpec::ReLU => {
                    out.clear();
                    out.extend(x.iter().map(|&v| v.max(T::zero())));
                }
                LayerSpec::Dropout { rate } => {
                    out.clear();
                    out.extend_from_slice(x);
                    let mask = &mut trace.masks[i];
                    mask.clear();
                    if let Some(rng) = dropout.as_deref_mut() {
                        if rate > 0.0 {
                            let keep = T::one() / T::from(1.0 - rate).unwrap();
                            mask.extend((0..x.len()).map(|_| {
                                if rng.gen::<f32>() < rate {
                                    T::zero()
                                } else {
                                    keep
                                }
                            }));
                            for (o, &m) in out.iter_mut().zip(mask.iter()) {
                                *o = *o * m;
                            }
                        }
                    }
                }
                LayerSpec::AvgPool1D { pool } => kernels::avg_pool(x, ch, pool, out),
                LayerSpec::Flatten => {
                    out.clear();
                    out.extend_from_slice(x);
                }
                LayerSpec::Dense { .. } => kernels::dense(x, &p.w, &p.b, out),
                LayerSpec::Softmax => {
                    out.clear();
                    out.extend_from_slice(x);
                    kernels::softmax_in_place(out);
                }
                LayerSpec::Lstm { .. } => unreachable!("rejected in from_graph"),
            }
        }
    }

    /// Cross-entropy of the traced sample, from the logits for stability.
    fn loss(&self, trace: &Trace<T>, label: usize) -> T {
        let logits = &trace.acts[self.layers.len() - 1];
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = logits
            .iter()
            .fold(T::zero(), |acc, &z| acc + (z - max).exp())
            .ln()
            + max;
        lse - logits[label]
    }

    fn backward(&self, trace: &Trace<T>, label: usize, grads: &mut [Tensors<T>]) {
        let n = self.layers.len();
        // softmax + cross-entropy: dL/dlogits = p - onehot
        let mut g: Vec<T> = trace.acts[n].clone();
        g[label] = g[label] - T::one();
        let mut gin: Vec<T> = Vec::new();
        for i in (0..n - 1).rev() {
            let x = &trace.acts[i];
            let ch = self.in_shapes[i].channels;
            let need_in = i > 0;
            gin.clear();
            gin.resize(x.len(), T::zero());
            let gt = &mut grads[i];
            match self.layers[i] {
                LayerSpec::Conv1D {
                    kernel,
                    out_filters,
                    ..
                } => kernels::conv1d_backward(
                    x,
                    ch,
                    &self.params[i].w,
                    kernel,
                    out_filters,
                    &g,
                    &mut gt.w,
                    &mut gt.b,
                    need_in.then_some(&mut gin[..]),
                ),
                LayerSpec::Dense { .. } => kernels::dense_backward(
                    x,
                    &self.params[i].w,
                    &g,
                    &mut gt.w,
                    &mut gt.b,
                    need_in.then_some(&mut gin[..]),
                ),
                LayerSpec::ReLU => {
                    for ((gi, &go), &xv) in gin.iter_mut().zip(&g).zip(x) {
                        *gi = if xv > T::zero() { go } else { T::zero() };
                    }
                }
                LayerSpec::Dropout { .. } => {
                    let mask = &trace.masks[i];
                    if mask.is_empty() {
                        gin.copy_from_slice(&g);
                    } else {
                        for ((gi, &go), &m) in gin.iter_mut().zip(&g).zip(mask) {
                            *gi = go * m;
                        }
                    }
                }
                LayerSpec::AvgPool1D { pool } => kernels::avg_pool_backward(&g, ch, pool, &mut gin),
                LayerSpec::Flatten => gin.copy_from_slice(&g),
                LayerSpec::Softmax | LayerSpec::Lstm { .. } => unreachable!(),
            }
            if !need_in {
                break;
            }
            core::mem::swap(&mut g, &mut gin);
        }
    }
}

struct Adam<T> {
    m: Vec<Tensors<T>>,
    v: Vec<Tensors<T>>,
    t: i32,
}

fn step<T: Float>(
    cfg: &TrainConfig,
    adam: &mut Adam<T>,
    params: &mut [Tensors<T>],
    grads: &[Tensors<T>],
    scale: T,
) {
    let lr = T::from(cfg.learning_rate).unwrap();
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                for (w, &gw) in
                    p.w.iter_mut()
                        .chain(p.b.iter_mut())
                        .zip(g.w.iter().chain(&g.b))
                {
                    *w = *w - lr * gw * scale;
                }
            }
        }
        Optimizer::Adam => {
            let b1 = T::from(0.9).unwrap();
            let b2 = T::from(0.999).unwrap();
            let eps = T::from(1e-8).unwrap();
            adam.t += 1;
            let c1 = T::one() - b1.powi(adam.t);
            let c2 = T::one() - b2.powi(adam.t);
            for (((p, g), m), v) in params
                .iter_mut()
                .zip(grads)
                .zip(adam.m.iter_mut())
                .zip(adam.v.iter_mut())
            {
                let pw = p.w.iter_mut().chain(p.b.iter_mut());
                let gw = g.w.iter().chain(&g.b);
                let mw = m.w.iter_mut().chain(m.b.iter_mut());
                let vw = v.w.iter_mut().chain(v.b.iter_mut());
                for (((w, &gr), mi), vi) in pw.zip(gw).zip(mw).zip(vw) {
                    let gr = gr * scale;
                    *mi = b1 * *mi + (T::one() - b1) * gr;
                    *vi = b2 * *vi + (T::one() - b2) * gr * gr;
                    let mh = *mi / c1;
                    let vh = *vi / c2;
                    *w = *w - lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

fn check_samples(graph: &ModelGraph, set: &[WindowedSample]) -> Result<(), EngineError> {
    for s in set {
        if s.window.shape() != graph.input_shape() {
            return Err(EngineError::ShapeMismatch {
                expected: graph.input_shape(),
                got: s.window.shape(),
            });
        }
        if s.label as usize >= graph.num_classes() {
            return Err(EngineError::BadLabel {
                label: s.label as usize,
                classes: graph.num_classes(),
            });
        }
    }
    Ok(())
}

/// Fraction of `set` whose argmax prediction matches the label.
pub(crate) fn accuracy_on(graph: &ModelGraph, set: &[WindowedSample]) -> Result<f64, EngineError> {
    let mut correct = 0usize;
    for s in set {
        if argmax(&forward(graph, &s.window)?) == s.label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.len().max(1) as f64)
}

/// Minimizes softmax cross-entropy with mini-batches. Deterministic in `cfg.seed`.
pub fn train(
    graph: &ModelGraph,
    train_set: &[WindowedSample],
    val_set: &[WindowedSample],
    cfg: &TrainConfig,
) -> Result<(ModelGraph, Vec<EpochStats>), EngineError> {
    cfg.validate()?;
    let mut net = Net::<f32>::from_graph(graph)?;
    if train_set.is_empty() {
        return Err(EngineError::EmptyDataset);
    }
    check_samples(graph, train_set)?;
    check_samples(graph, val_set)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam {
        m: net.zero_grads(),
        v: net.zero_grads(),
        t: 0,
    };
    let mut grads = net.zero_grads();
    let mut trace = net.new_trace();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut current = graph.clone();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            for g in grads.iter_mut() {
                g.w.fill(0.0);
                g.b.fill(0.0);
            }
            for &idx in batch {
                let s = &train_set[idx];
                let label = s.label as usize;
                net.forward(s.window.data(), Some(&mut rng), &mut trace);
                loss_sum += net.loss(&trace, label) as f64;
                if argmax(&trace.acts[net.layers.len()]) == label {
                    correct += 1;
                }
                net.backward(&trace, label, &mut grads);
            }
            step(
                cfg,
                &mut adam,
                &mut net.params,
                &grads,
                1.0 / batch.len() as f32,
            );
        }
        current = graph
            .with_params(net.to_params())
            .expect("trainer preserves parameter shapes");
        let val_acc = if val_set.is_empty() {
            None
        } else {
            Some(accuracy_on(&current, val_set)?)
        };
        history.push(EpochStats {
            epoch,
            loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_acc,
        });
    }
    Ok((current, history))
}

/// Cross-entropy loss and its exact gradients (f64, dropout off).
pub fn loss_and_gradients(
    graph: &ModelGraph,
    window: &crate::Tensor2D,
    label: usize,
) -> Result<(f64, Vec<LayerParams>), EngineError> {
    let net = Net::<f64>::from_graph(graph)?;
    check_samples(
        graph,
        &[WindowedSample {
            window: window.clone(),
            label: label as u8,
            subject: 0,
            session: 0,
        }],
    )?;
    let input: Vec<f64> = window.data().iter().map(|&v| v as f64).collect();
    let mut trace = net.new_trace();
    net.forward(&input, None, &mut trace);
    let loss = net.loss(&trace, label);
    let mut grads = net.zero_grads();
    net.backward(&trace, label, &mut grads);
    let grads = grads
        .iter()
        .map(|g| LayerParams {
            weights: g.w.iter().map(|&v| v as f32).collect(),
            recurrent: Vec::new(),
            bias: g.b.iter().map(|&v| v as f32).collect(),
        })
        .collect();
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference half step.
    pub step: f64,
    /// Parameters sampled (all of them when the model has fewer).
    pub samples: usize,
    pub seed: u64,
    /// Denominator floor of the relative error, for gradients near zero.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            samples: 200,
            seed: 0,
            floor: 1e-7,
        }
    }
}

/// Max relative discrepancy `|a - n| / max(|a|, |n|, floor)` between analytic
/// gradients `a` and central differences `n` over sampled parameters.
pub fn grad_check(
    graph: &ModelGraph,
    window: &crate::Tensor2D,
    label: usize,
    cfg: &GradCheckConfig,
) -> Result<f64, EngineError> {
    let mut net = Net::<f64>::from_graph(graph)?;
    if window.shape() != graph.input_shape() {
        return Err(EngineError::ShapeMismatch {
            expected: graph.input_shape(),
            got: window.shape(),
        });
    }
    if label >= graph.num_classes() {
        return Err(EngineError::BadLabel {
            label,
            classes: graph.num_classes(),
        });
    }
    let input: Vec<f64> = window.data().iter().map(|&v| v as f64).collect();
    let mut trace = net.new_trace();
    net.forward(&input, None, &mut trace);
    let mut grads = net.zero_grads();
    net.backward(&trace, label, &mut grads);

    // flat index space over (layer, weights|bias, offset)
    let mut slots = Vec::new();
    for (li, p) in net.params.iter().enumerate() {
        slots.extend((0..p.w.len()).map(|j| (li, false, j)));
        slots.extend((0..p.b.len()).map(|j| (li, true, j)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if slots.len() > cfg.samples {
        slots.shuffle(&mut rng);
        slots.truncate(cfg.samples);
    }

    let mut worst = 0.0f64;
    for (li, is_bias, j) in slots {
        let analytic = if is_bias {
            grads[li].b[j]
        } else {
            grads[li].w[j]
        };
        let mut eval = |delta: f64, net: &mut Net<f64>| {
            let slot = if is_bias {
                &mut net.params[li].b[j]
            } else {
                &mut net.params[li].w[j]
            };
            let orig = *slot;
            *slot = orig + delta;
            net.forward(&input, None, &mut trace);
            let l = net.loss(&trace, label);
            let slot = if is_bias {
                &mut net.params[li].b[j]
            } else {
                &mut net.params[li].w[j]
            };
            *slot = orig;
            l
        };
        let plus = eval(cfg.step, &mut net);
        let minus = eval(-cfg.step, &mut net);
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let denom = analytic.abs().max(numeric.abs()).max(cfg.floor);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_ir::{build_deep_conv_lstm, build_mc_cnn, DeepConvLstmConfig, McCnnConfig};
    use crate::Tensor2D;

    fn wavy(seed: u64, steps: usize, ch: usize) -> Tensor2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor2D::from_fn(steps, ch, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn tiny_cnn() -> ModelGraph {
        let mut cfg = McCnnConfig::new(3, 4);
        cfg.window_len = 10;
        cfg.dense_width = 6;
        cfg.seed = 11;
        build_mc_cnn(&cfg).unwrap()
    }

    #[test]
    fn grad_check_tiny_mc_cnn() {
        let g = tiny_cnn();
        let err = grad_check(&g, &wavy(1, 10, 3), 4, &GradCheckConfig::default()).unwrap();
        assert!(err <= 1e-3, "max relative error {err}");
    }

    #[test]
    fn grad_check_dense_only() {
        let layers = vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                in_dim: 12,
                out_dim: 9,
            },
            LayerSpec::ReLU,
            LayerSpec::Dense {
                in_dim: 9,
                out_dim: 5,
            },
            LayerSpec::Softmax,
        ];
        let g = ModelGraph::with_init(Shape::new(4, 3), 5, layers, 2).unwrap();
        let err = grad_check(&g, &wavy(2, 4, 3), 1, &GradCheckConfig::default()).unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_input_zero_weights_give_zero_conv_grads() {
        let g = tiny_cnn();
        let zeroed = g
            .params()
            .iter()
            .zip(g.layers())
            .map(|(_, l)| LayerParams::zeros(l))
            .collect();
        let g = g.with_params(zeroed).unwrap();
        let (_, grads) = loss_and_gradients(&g, &Tensor2D::zeros(10, 3), 0).unwrap();
        for (l, gr) in g.layers().iter().zip(&grads) {
            if matches!(l, LayerSpec::Conv1D { .. }) {
                assert!(gr.weights.iter().all(|&v| v == 0.0));
            }
        }
    }

    fn toy_set(seed: u64, n: usize) -> Vec<WindowedSample> {
        // class decided by the sign of the mean of channel 0; channel 1 is noise
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let sign = if label == 0 { -1.0 } else { 1.0 };
                let window = Tensor2D::from_fn(8, 2, |_, c| {
                    if c == 0 {
                        sign * rng.gen_range(0.5..1.5f32)
                    } else {
                        rng.gen_range(-1.0..1.0)
                    }
                });
                WindowedSample {
                    window,
                    label,
                    subject: 0,
                    session: 1,
                }
            })
            .collect()
    }

    fn toy_graph() -> ModelGraph {
        let mut cfg = McCnnConfig::new(2, 8);
        cfg.window_len = 8;
        cfg.dense_width = 8;
        cfg.num_classes = 2;
        cfg.seed = 4;
        build_mc_cnn(&cfg).unwrap()
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let data = toy_set(9, 64);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 8,
            learning_rate: 1e-2,
            seed: 1,
            optimizer: Optimizer::Adam,
        };
        let (trained, hist) = train(&toy_graph(), &data, &data[..16], &cfg).unwrap();
        assert_eq!(hist.len(), 50);
        assert!(accuracy_on(&trained, &data).unwrap() >= 0.99);
        assert!(hist.last().unwrap().loss < hist[0].loss);
    }

    #[test]
    fn sgd_also_learns() {
        let data = toy_set(3, 64);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 0.05,
            seed: 1,
            optimizer: Optimizer::Sgd,
        };
        let (trained, _) = train(&toy_graph(), &data, &[], &cfg).unwrap();
        assert!(accuracy_on(&trained, &data).unwrap() >= 0.95);
    }

    #[test]
    fn same_seed_same_history() {
        let data = toy_set(5, 32);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 77,
            ..TrainConfig::default()
        };
        let (a, ha) = train(&toy_graph(), &data, &data, &cfg).unwrap();
        let (b, hb) = train(&toy_graph(), &data, &data, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
    }

    #[test]
    fn lstm_graphs_are_not_trainable() {
        let mut cfg = DeepConvLstmConfig::new(2, 4);
        cfg.window_len = 12;
        cfg.hidden = 3;
        let g = build_deep_conv_lstm(&cfg).unwrap();
        let data = toy_set(1, 4);
        assert_eq!(
            train(&g, &data, &[], &TrainConfig::default()).unwrap_err(),
            EngineError::UnsupportedLayer("lstm")
        );
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            learning_rate: 1.5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
