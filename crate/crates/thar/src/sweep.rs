//! Train, quantize and evaluate every configuration of the benchmark grid.

use rayon::prelude::*;
use thar_core::benchlab::{
    estimate_arena, estimate_arena_quantized, evaluate, mcu_estimates, ConfigDescriptor,
    EvalReport, ModelRef,
};
use thar_core::datapipe::{
    fit_stats, make_windows, normalize, select_channels, split_by_session, ChannelGroup,
    DatasetStats, Recording, WindowedSample,
};
use thar_core::float_engine::{train, TrainConfig};
use thar_core::model_ir::{build_architecture, model_size_bytes, Architecture, FilterLevel};
use thar_core::quantizer::quantize_model;
use thar_core::{LayerSpec, ModelGraph, Precision, QuantizedModel, Shape};

use crate::profiles::Registry;
use crate::timing::timed_inference;

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub seed: u64,
    pub archs: Vec<Architecture>,
    pub groups: Vec<ChannelGroup>,
    pub levels: Vec<FilterLevel>,
    pub precisions: Vec<Precision>,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub calibration_windows: usize,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
    /// Host timing repetitions; 0 leaves host latency out of the reports.
    pub host_latency_reps: usize,
    pub registry: Registry,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            archs: Architecture::ALL.to_vec(),
            groups: vec![
                ChannelGroup::G17,
                ChannelGroup::G23,
                ChannelGroup::G768,
                ChannelGroup::G791,
            ],
            levels: FilterLevel::ALL.to_vec(),
            precisions: vec![Precision::Float32, Precision::Int8Full],
            split: SplitConfig {
                max_train: Some(1200),
                ..SplitConfig::default()
            },
            train: TrainConfig {
                epochs: 5,
                seed: 7,
                ..TrainConfig::default()
            },
            calibration_windows: 200,
            jobs: 0,
            host_latency_reps: 0,
            registry: Registry::default(),
        }
    }
}

/// Windowing and leave-one-session-out split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    /// Samples per window.
    pub window_len: usize,
    /// Samples between window starts.
    pub stride: usize,
    pub held_out_session: u8,
    /// Evenly spaced subset of the training split; `None` keeps all.
    pub max_train: Option<usize>,
    pub max_test: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            window_len: 24,
            stride: 12,
            held_out_session: 5,
            max_train: None,
            max_test: None,
        }
    }
}

/// Normalized train and test windows for one channel group.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub group: ChannelGroup,
    pub train: Vec<WindowedSample>,
    pub test: Vec<WindowedSample>,
    pub stats: DatasetStats,
}

/// `limit` evenly spaced elements, first one included.
pub fn thin<T>(items: Vec<T>, limit: Option<usize>) -> Vec<T> {
    match limit {
        Some(n) if n < items.len() => {
            let len = items.len();
            let keep: Vec<usize> = (0..n).map(|i| i * len / n).collect();
            let mut k = 0;
            items
                .into_iter()
                .enumerate()
                .filter(|(i, _)| {
                    let hit = k < keep.len() && keep[k] == *i;
                    if hit {
                        k += 1;
                    }
                    hit
                })
                .map(|(_, t)| t)
                .collect()
        }
        _ => items,
    }
}

/// Windows `recordings` at `group`, splits off the held-out session and normalizes
/// with `stats`, or with statistics fitted on the training split when `None`.
pub fn prepare_group(
    recordings: &[Recording],
    group: ChannelGroup,
    split: &SplitConfig,
    stats: Option<&DatasetStats>,
) -> Result<PreparedData, String> {
    let held_out_session = split.held_out_session;
    let mut windows = Vec::new();
    for rec in recordings {
        let r = select_channels(rec, group).map_err(|e| e.to_string())?;
        windows.extend(
            make_windows(std::slice::from_ref(&r), split.window_len, split.stride)
                .map_err(|e| e.to_string())?,
        );
    }
    let (train, test) = split_by_session(windows, held_out_session);
    if train.is_empty() || test.is_empty() {
        return Err(format!(
            "session {held_out_session} split leaves {} train and {} test windows",
            train.len(),
            test.len()
        ));
    }
    let mut train = thin(train, split.max_train);
    let mut test = thin(test, split.max_test);
    let stats = match stats {
        Some(s) => s.clone(),
        None => fit_stats(&train).map_err(|e| e.to_string())?,
    };
    normalize(&mut train, &stats).map_err(|e| e.to_string())?;
    normalize(&mut test, &stats).map_err(|e| e.to_string())?;
    Ok(PreparedData {
        group,
        train,
        test,
        stats,
    })
}

/// Float and int8 forms of one architecture.
#[derive(Debug, Clone)]
pub struct FittedModels {
    pub graph: ModelGraph,
    pub quantized: QuantizedModel,
    /// False for architectures that are only sized and timed.
    pub trained: bool,
}

/// MC-CNN is trained; DeepConvLSTM keeps its seeded initialization.
pub fn fit_models(
    data: &PreparedData,
    arch: Architecture,
    level: FilterLevel,
    window_len: usize,
    seed: u64,
    train_cfg: &TrainConfig,
    calibration_windows: usize,
) -> Result<FittedModels, String> {
    let graph = build_architecture(arch, data.group.len(), level, window_len, seed)
        .map_err(|e| e.to_string())?;
    let (graph, trained) = match arch {
        Architecture::McCnn => {
            let (g, _) = train(&graph, &data.train, &[], train_cfg).map_err(|e| e.to_string())?;
            (g, true)
        }
        Architecture::DeepConvLstm => (graph, false),
    };
    let step = (data.train.len() / calibration_windows.max(1)).max(1);
    let reps: Vec<_> = data
        .train
        .iter()
        .step_by(step)
        .take(calibration_windows.max(1))
        .map(|s| &s.window)
        .collect();
    let quantized = quantize_model(&graph, reps).map_err(|e| e.to_string())?;
    Ok(FittedModels {
        graph,
        quantized,
        trained,
    })
}

pub fn mac_count_layers(input: Shape, layers: &[LayerSpec]) -> u64 {
    let mut shape = input;
    let mut total = 0;
    for (i, l) in layers.iter().enumerate() {
        total += l.macs(shape);
        shape = l.output_shape(i, shape).unwrap_or(shape);
    }
    total
}

/// Recovers the grid entry a model belongs to from its layer stack.
pub fn describe(
    input: Shape,
    layers: &[LayerSpec],
    precision: Precision,
) -> Option<ConfigDescriptor> {
    let group = ChannelGroup::ALL
        .into_iter()
        .find(|g| g.len() == input.channels)?;
    let arch = if layers.iter().any(|l| matches!(l, LayerSpec::Lstm { .. })) {
        Architecture::DeepConvLstm
    } else {
        Architecture::McCnn
    };
    let first = layers.iter().find_map(|l| match l {
        LayerSpec::Conv1D { out_filters, .. } => Some(*out_filters),
        _ => None,
    })?;
    let level = FilterLevel::ALL
        .into_iter()
        .find(|l| l.filters(arch) == first)?;
    Some(ConfigDescriptor {
        arch,
        group,
        level,
        precision,
    })
}

/// Size, cost and (when `test` is given) quality of one model.
pub fn report_for(
    config: ConfigDescriptor,
    model: ModelRef<'_>,
    test: Option<&[WindowedSample]>,
    registry: &Registry,
    host_latency_reps: usize,
) -> Result<EvalReport, String> {
    let (model_size, mac_count, arena_bytes, input) = match model {
        ModelRef::Float(g) => (
            model_size_bytes(g, Precision::Float32) as u64,
            g.mac_count(),
            estimate_arena(g, Precision::Float32).bytes,
            g.input_shape(),
        ),
        ModelRef::Int8(q) => {
            let layers: Vec<LayerSpec> = q.layers.iter().map(|l| l.spec).collect();
            (
                q.to_bytes().len() as u64,
                mac_count_layers(q.input_shape, &layers),
                estimate_arena_quantized(q).bytes,
                q.input_shape,
            )
        }
    };
    let (accuracy, macro_f1, confusion) = match test {
        Some(samples) => {
            let (a, f, m) = evaluate(model, samples).map_err(|e| e.to_string())?;
            (Some(a), Some(f), Some(m))
        }
        None => (None, None, None),
    };
    let host_latency = if host_latency_reps > 0 {
        let window = match test.and_then(|t| t.first()) {
            Some(s) => s.window.clone(),
            None => thar_core::Tensor2D::zeros(input.steps, input.channels),
        };
        Some(timed_inference(model, &window, host_latency_reps).map_err(|e| e.to_string())?)
    } else {
        None
    };
    let mcu = mcu_estimates(
        mac_count,
        model_size,
        arena_bytes,
        config.precision,
        &registry.profiles,
        registry.overhead,
        &registry.latency,
    );
    Ok(EvalReport {
        config,
        accuracy,
        macro_f1,
        confusion,
        model_size,
        mac_count,
        arena_bytes,
        host_latency,
        mcu,
        error: None,
    })
}

fn failed(config: ConfigDescriptor, error: String) -> EvalReport {
    EvalReport {
        config,
        accuracy: None,
        macro_f1: None,
        confusion: None,
        model_size: 0,
        mac_count: 0,
        arena_bytes: 0,
        host_latency: None,
        mcu: Vec::new(),
        error: Some(error),
    }
}

fn run_unit(
    cfg: &SweepConfig,
    data: &Result<PreparedData, String>,
    arch: Architecture,
    group: ChannelGroup,
    level: FilterLevel,
) -> Vec<EvalReport> {
    let configs: Vec<ConfigDescriptor> = cfg
        .precisions
        .iter()
        .map(|&precision| ConfigDescriptor {
            arch,
            group,
            level,
            precision,
        })
        .collect();
    let data = match data {
        Ok(d) => d,
        Err(e) => return configs.into_iter().map(|c| failed(c, e.clone())).collect(),
    };
    let mut train_cfg = cfg.train;
    train_cfg.seed = cfg.seed;
    let fitted = match fit_models(
        data,
        arch,
        level,
        cfg.split.window_len,
        cfg.seed,
        &train_cfg,
        cfg.calibration_windows,
    ) {
        Ok(f) => f,
        Err(e) => return configs.into_iter().map(|c| failed(c, e.clone())).collect(),
    };
    configs
        .into_iter()
        .map(|c| {
            let model = match c.precision {
                Precision::Float32 => ModelRef::Float(&fitted.graph),
                Precision::Int8Full => ModelRef::Int8(&fitted.quantized),
            };
            let test = fitted.trained.then_some(data.test.as_slice());
            report_for(c, model, test, &cfg.registry, cfg.host_latency_reps)
                .unwrap_or_else(|e| failed(c, e))
        })
        .collect()
}

/// Reports in grid order (architecture, group, level, precision). Failing entries carry their error.
pub fn run_sweep(
    cfg: &SweepConfig,
    recordings: &[Recording],
) -> Result<Vec<EvalReport>, rayon::ThreadPoolBuildError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()?;
    Ok(pool.install(|| {
        let prepared: Vec<(ChannelGroup, Result<PreparedData, String>)> = cfg
            .groups
            .par_iter()
            .map(|&g| {
                let d = prepare_group(recordings, g, &cfg.split, None);
                (g, d)
            })
            .collect();
        let mut units = Vec::new();
        for &arch in &cfg.archs {
            for (gi, &group) in cfg.groups.iter().enumerate() {
                for &level in &cfg.levels {
                    units.push((arch, gi, group, level));
                }
            }
        }
        let nested: Vec<Vec<EvalReport>> = units
            .par_iter()
            .map(|&(arch, gi, group, level)| run_unit(cfg, &prepared[gi].1, arch, group, level))
            .collect();
        let mut out: Vec<EvalReport> = nested.into_iter().flatten().collect();
        out.sort_by_key(|r| grid_rank(&r.config));
        out
    }))
}

fn grid_rank(c: &ConfigDescriptor) -> usize {
    ConfigDescriptor::grid()
        .iter()
        .position(|g| g == c)
        .unwrap_or(usize::MAX)
}
