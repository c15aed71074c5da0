use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{GraphError, LayerSpec, ModelGraph, Shape};
use crate::NUM_CLASSES;

/// Hyperparameters of the two-convolution MC-CNN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McCnnConfig {
    pub channels: usize,
    pub window_len: usize,
    /// Filters of the first convolution; the second gets a quarter of them.
    pub first_filters: usize,
    pub kernel: usize,
    pub pool: usize,
    pub dense_width: usize,
    pub num_classes: usize,
    pub dropout_rate: f32,
    pub seed: u64,
}

impl McCnnConfig {
    pub fn new(channels: usize, first_filters: usize) -> Self {
        Self {
            channels,
            window_len: 24,
            first_filters,
            kernel: 3,
            pool: 2,
            dense_width: 128,
            num_classes: NUM_CLASSES,
            dropout_rate: 0.2,
            seed: 0,
        }
    }
}

/// Conv1D(F) → ReLU → Conv1D(F/4) → ReLU → Dropout → AvgPool1D → Flatten →
/// Dense → ReLU → Dense(classes) → Softmax.
pub fn build_mc_cnn(cfg: &McCnnConfig) -> Result<ModelGraph, GraphError> {
    if !cfg.first_filters.is_multiple_of(4) || cfg.first_filters == 0 {
        return Err(GraphError::FilterRatio(cfg.first_filters));
    }
    let second = cfg.first_filters / 4;
    let pooled_steps = {
        // dense input width depends on what survives both convolutions and pooling
        let after = cfg.window_len.saturating_sub(2 * (cfg.kernel.max(1) - 1));
        after / cfg.pool.max(1)
    };
    let layers = vec![
        LayerSpec::Conv1D {
            in_channels: cfg.channels,
            out_filters: cfg.first_filters,
            kernel: cfg.kernel,
        },
        LayerSpec::ReLU,
        LayerSpec::Conv1D {
            in_channels: cfg.first_filters,
            out_filters: second,
            kernel: cfg.kernel,
        },
        LayerSpec::ReLU,
        LayerSpec::Dropout {
            rate: cfg.dropout_rate,
        },
        LayerSpec::AvgPool1D { pool: cfg.pool },
        LayerSpec::Flatten,
        LayerSpec::Dense {
            in_dim: pooled_steps * second,
            out_dim: cfg.dense_width,
        },
        LayerSpec::ReLU,
        LayerSpec::Dense {
            in_dim: cfg.dense_width,
            out_dim: cfg.num_classes,
        },
        LayerSpec::Softmax,
    ];
    ModelGraph::with_init(
        Shape::new(cfg.window_len, cfg.channels),
        cfg.num_classes,
        layers,
        cfg.seed,
    )
}

/// Hyperparameters of the four-convolution, two-LSTM network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeepConvLstmConfig {
    pub channels: usize,
    pub window_len: usize,
    /// Filters of every convolution.
    pub filters: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl DeepConvLstmConfig {
    pub fn new(channels: usize, filters: usize) -> Self {
        Self {
            channels,
            window_len: 24,
            filters,
            kernel: 3,
            hidden: 128,
            num_classes: NUM_CLASSES,
            seed: 0,
        }
    }
}

/// 4 × (Conv1D → ReLU) → LSTM (sequence) → LSTM (last step) → Dense → Softmax.
pub fn build_deep_conv_lstm(cfg: &DeepConvLstmConfig) -> Result<ModelGraph, GraphError> {
    let mut layers = Vec::with_capacity(12);
    let mut in_channels = cfg.channels;
    for _ in 0..4 {
        layers.push(LayerSpec::Conv1D {
            in_channels,
            out_filters: cfg.filters,
            kernel: cfg.kernel,
        });
        layers.push(LayerSpec::ReLU);
        in_channels = cfg.filters;
    }
    layers.push(LayerSpec::Lstm {
        in_dim: cfg.filters,
        hidden: cfg.hidden,
        return_sequences: true,
    });
    layers.push(LayerSpec::Lstm {
        in_dim: cfg.hidden,
        hidden: cfg.hidden,
        return_sequences: false,
    });
    layers.push(LayerSpec::Dense {
        in_dim: cfg.hidden,
        out_dim: cfg.num_classes,
    });
    layers.push(LayerSpec::Softmax);
    ModelGraph::with_init(
        Shape::new(cfg.window_len, cfg.channels),
        cfg.num_classes,
        layers,
        cfg.seed,
    )
}

/// Network family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Architecture {
    McCnn,
    DeepConvLstm,
}

impl Architecture {
    pub const ALL: [Architecture; 2] = [Architecture::McCnn, Architecture::DeepConvLstm];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::McCnn => "mc-cnn",
            Architecture::DeepConvLstm => "deepconvlstm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s
            .trim()
            .to_ascii_lowercase()
            .replace(['_', '-'], "")
            .as_str()
        {
            "mccnn" => Some(Architecture::McCnn),
            "deepconvlstm" | "dcl" => Some(Architecture::DeepConvLstm),
            _ => None,
        }
    }
}

/// The three filter sizes each architecture is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FilterLevel {
    N1,
    N2,
    N3,
}

impl FilterLevel {
    pub const ALL: [FilterLevel; 3] = [FilterLevel::N1, FilterLevel::N2, FilterLevel::N3];

    /// First-convolution filters for MC-CNN, per-layer filters for DeepConvLSTM.
    pub fn filters(self, arch: Architecture) -> usize {
        match (arch, self) {
            (Architecture::McCnn, FilterLevel::N1) => 128,
            (Architecture::McCnn, FilterLevel::N2) => 256,
            (Architecture::McCnn, FilterLevel::N3) => 400,
            (Architecture::DeepConvLstm, FilterLevel::N1) => 32,
            (Architecture::DeepConvLstm, FilterLevel::N2) => 64,
            (Architecture::DeepConvLstm, FilterLevel::N3) => 100,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FilterLevel::N1 => "N1",
            FilterLevel::N2 => "N2",
            FilterLevel::N3 => "N3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "N1" | "n1" | "1" => Some(FilterLevel::N1),
            "N2" | "n2" | "2" => Some(FilterLevel::N2),
            "N3" | "n3" | "3" => Some(FilterLevel::N3),
            _ => None,
        }
    }
}

/// Builds `arch` at `level` with default hyperparameters.
pub fn build_architecture(
    arch: Architecture,
    channels: usize,
    level: FilterLevel,
    window_len: usize,
    seed: u64,
) -> Result<ModelGraph, GraphError> {
    let filters = level.filters(arch);
    match arch {
        Architecture::McCnn => {
            let mut cfg = McCnnConfig::new(channels, filters);
            cfg.window_len = window_len;
            cfg.seed = seed;
            build_mc_cnn(&cfg)
        }
        Architecture::DeepConvLstm => {
            let mut cfg = DeepConvLstmConfig::new(channels, filters);
            cfg.window_len = window_len;
            cfg.seed = seed;
            build_deep_conv_lstm(&cfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_filters(g: &ModelGraph) -> Vec<usize> {
        g.layers()
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv1D { out_filters, .. } => Some(*out_filters),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn mc_cnn_second_conv_is_a_quarter() {
        let g = build_mc_cnn(&McCnnConfig::new(23, 400)).unwrap();
        assert_eq!(conv_filters(&g), vec![400, 100]);
        let g = build_mc_cnn(&McCnnConfig::new(23, 128)).unwrap();
        assert_eq!(conv_filters(&g), vec![128, 32]);
    }

    #[test]
    fn mc_cnn_layer_sequence() {
        let g = build_mc_cnn(&McCnnConfig::new(17, 128)).unwrap();
        let names: Vec<_> = g.layers().iter().map(LayerSpec::name).collect();
        assert_eq!(
            names,
            [
                "conv1d",
                "relu",
                "conv1d",
                "relu",
                "dropout",
                "avgpool1d",
                "flatten",
                "dense",
                "relu",
                "dense",
                "softmax"
            ]
        );
        // 24 -> 22 -> 20 -> pool 2 -> 10 steps of 32 filters
        assert_eq!(
            g.layers()[7],
            LayerSpec::Dense {
                in_dim: 320,
                out_dim: 128
            }
        );
    }

    #[test]
    fn mc_cnn_rejects_non_multiple_of_four() {
        assert_eq!(
            build_mc_cnn(&McCnnConfig::new(23, 130)).unwrap_err(),
            GraphError::FilterRatio(130)
        );
    }

    #[test]
    fn mc_cnn_short_window_underflows() {
        let mut cfg = McCnnConfig::new(23, 128);
        cfg.window_len = 4;
        assert!(matches!(
            build_mc_cnn(&cfg),
            Err(GraphError::ShapeUnderflow { .. })
        ));
    }

    #[test]
    fn deep_conv_lstm_uniform_filters() {
        let g = build_deep_conv_lstm(&DeepConvLstmConfig::new(23, 100)).unwrap();
        assert_eq!(conv_filters(&g), vec![100; 4]);
        let g = build_deep_conv_lstm(&DeepConvLstmConfig::new(768, 32)).unwrap();
        assert_eq!(
            g.layers()[0],
            LayerSpec::Conv1D {
                in_channels: 768,
                out_filters: 32,
                kernel: 3
            }
        );
    }

    #[test]
    fn deep_conv_lstm_short_window_underflows() {
        let mut cfg = DeepConvLstmConfig::new(23, 32);
        cfg.window_len = 3;
        assert!(matches!(
            build_deep_conv_lstm(&cfg),
            Err(GraphError::ShapeUnderflow { layer: 2, .. })
        ));
    }

    #[test]
    fn all_paper_grid_configs_build() {
        for channels in [791, 768, 23, 17] {
            for (mc, dcl) in [(128, 32), (256, 64), (400, 100)] {
                let a = build_mc_cnn(&McCnnConfig::new(channels, mc)).unwrap();
                let b = build_deep_conv_lstm(&DeepConvLstmConfig::new(channels, dcl)).unwrap();
                for g in [a, b] {
                    assert_eq!(g.output_shapes().last().unwrap().channels, 15);
                }
            }
        }
    }
}
