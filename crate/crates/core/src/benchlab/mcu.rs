//! Microcontroller resource model: feasibility, latency and energy estimates.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model_ir::{LayerSpec, ModelGraph, Precision, Shape};
use crate::quantizer::QuantizedModel;

pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McuProfile {
    pub name: String,
    pub clock_mhz: f64,
    pub flash_bytes: u64,
    pub sram_bytes: u64,
    /// Watts while running a float model.
    pub power_float_w: f64,
    /// Watts while running an int8 model.
    pub power_int8_w: f64,
    /// MAC throughput relative to an M7-class core at the same clock.
    pub core_factor: f64,
}

impl McuProfile {
    fn builtin(
        name: &str,
        clock_mhz: f64,
        flash: u64,
        sram: u64,
        pf: f64,
        pi: f64,
        core: f64,
    ) -> Self {
        Self {
            name: name.into(),
            clock_mhz,
            flash_bytes: flash,
            sram_bytes: sram,
            power_float_w: pf,
            power_int8_w: pi,
            core_factor: core,
        }
    }

    pub fn power_w(&self, precision: Precision) -> f64 {
        match precision {
            Precision::Float32 => self.power_float_w,
            Precision::Int8Full => self.power_int8_w,
        }
    }

    /// Every numeric field positive and finite.
    pub fn is_valid(&self) -> bool {
        [
            self.clock_mhz,
            self.power_float_w,
            self.power_int8_w,
            self.core_factor,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0)
            && self.flash_bytes > 0
            && self.sram_bytes > 0
            && !self.name.is_empty()
    }
}

pub const M7_CORE_FACTOR: f64 = 1.0;
pub const M4_CORE_FACTOR: f64 = 0.25;

/// nRF52840, MIMXRT1062, STM32L4S5, STM32F767.
pub fn builtin_profiles() -> Vec<McuProfile> {
    alloc::vec![
        // no float measurement exists for this part; the int8 draw stands in
        McuProfile::builtin("nRF52840", 64.0, MIB, 256 * KIB, 0.10, 0.10, M4_CORE_FACTOR),
        McuProfile::builtin(
            "MIMXRT1062",
            600.0,
            8 * MIB,
            1000 * KIB,
            0.78,
            0.73,
            M7_CORE_FACTOR
        ),
        McuProfile::builtin(
            "STM32L4S5",
            120.0,
            2 * MIB,
            640 * KIB,
            0.67,
            0.62,
            M4_CORE_FACTOR
        ),
        McuProfile::builtin(
            "STM32F767",
            216.0,
            2 * MIB,
            512 * KIB,
            1.13,
            1.08,
            M7_CORE_FACTOR
        ),
    ]
}

/// Case-insensitive lookup in `profiles`.
pub fn find_profile<'a>(profiles: &'a [McuProfile], name: &str) -> Option<&'a McuProfile> {
    profiles
        .iter()
        .find(|p| p.name.eq_ignore_ascii_case(name.trim()))
}

/// Firmware and runtime footprint added to every model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeOverhead {
    pub flash_bytes: u64,
    pub ram_bytes: u64,
}

impl Default for RuntimeOverhead {
    fn default() -> Self {
        Self {
            flash_bytes: 256 * KIB,
            ram_bytes: 64 * KIB,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibilityVerdict {
    pub flash_ok: bool,
    pub sram_ok: bool,
    /// Model plus flash overhead.
    pub flash_needed: u64,
    /// Arena plus RAM overhead.
    pub arena_needed: u64,
}

impl FeasibilityVerdict {
    pub fn feasible(&self) -> bool {
        self.flash_ok && self.sram_ok
    }
}

pub fn fits_on(
    model_size: u64,
    arena_estimate: u64,
    profile: &McuProfile,
    overhead: RuntimeOverhead,
) -> FeasibilityVerdict {
    let flash_needed = model_size.saturating_add(overhead.flash_bytes);
    let arena_needed = arena_estimate.saturating_add(overhead.ram_bytes);
    FeasibilityVerdict {
        flash_ok: flash_needed <= profile.flash_bytes,
        sram_ok: arena_needed <= profile.sram_bytes,
        flash_needed,
        arena_needed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArenaEstimate {
    pub bytes: u64,
    /// Layer whose input and output buffers set the peak.
    pub peak_layer: usize,
}

/// Elementwise layers that can overwrite their input buffer.
fn in_place(spec: &LayerSpec) -> bool {
    matches!(
        spec,
        LayerSpec::ReLU | LayerSpec::Dropout { .. } | LayerSpec::Flatten
    )
}

/// Peak over layers of live input plus output activation bytes.
pub fn estimate_arena_layers(
    input: Shape,
    layers: &[LayerSpec],
    precision: Precision,
) -> ArenaEstimate {
    let elem = precision.activation_bytes() as u64;
    let mut best = ArenaEstimate {
        bytes: 0,
        peak_layer: 0,
    };
    let mut cur = input;
    for (i, spec) in layers.iter().enumerate() {
        let out = spec.output_shape(i, cur).unwrap_or(cur);
        let bytes = if in_place(spec) {
            out.len() as u64 * elem
        } else {
            (cur.len() + out.len()) as u64 * elem
        };
        if bytes > best.bytes {
            best = ArenaEstimate {
                bytes,
                peak_layer: i,
            };
        }
        cur = out;
    }
    best
}

pub fn estimate_arena(graph: &ModelGraph, precision: Precision) -> ArenaEstimate {
    estimate_arena_layers(graph.input_shape(), graph.layers(), precision)
}

pub fn estimate_arena_quantized(model: &QuantizedModel) -> ArenaEstimate {
    let layers: Vec<LayerSpec> = model.layers.iter().map(|l| l.spec).collect();
    estimate_arena_layers(model.input_shape, &layers, Precision::Int8Full)
}

/// Cycle costs behind [`estimate_latency`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    /// Cycles per int8 MAC on an M7-class core.
    pub int8_cycles_per_mac: f64,
    /// Multiplier on the int8 cost for float32 MACs.
    pub float_penalty: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            int8_cycles_per_mac: 1.0,
            float_penalty: 8.0,
        }
    }
}

impl LatencyModel {
    pub fn cycles_per_mac(&self, precision: Precision) -> f64 {
        match precision {
            Precision::Int8Full => self.int8_cycles_per_mac,
            Precision::Float32 => self.int8_cycles_per_mac * self.float_penalty,
        }
    }
}

/// Milliseconds for `macs` multiply-accumulates on `profile`.
pub fn estimate_latency(
    macs: u64,
    precision: Precision,
    profile: &McuProfile,
    model: &LatencyModel,
) -> f64 {
    let cycles = macs as f64 * model.cycles_per_mac(precision);
    cycles / (profile.clock_mhz * 1e6 * profile.core_factor) * 1e3
}

/// Millijoules: watts times milliseconds.
pub fn estimate_energy(latency_ms: f64, profile: &McuProfile, precision: Precision) -> f64 {
    profile.power_w(precision) * latency_ms
}
