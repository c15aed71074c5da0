//! Allocation-only core of the tiny-HAR benchlab.
//!
//! Everything in this crate is pure computation over in-memory buffers: the
//! layer-graph model representation and its file format, a float32 reference
//! executor and trainer, the full-integer post-training quantizer, the
//! integer-only executor, the sensor data pipeline with its synthetic
//! generator, and the evaluation metrics and microcontroller resource model.
//! File IO, timing, report rendering and the command line live in the `thar`
//! crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod benchlab;
pub mod datapipe;
pub mod float_engine;
pub mod int8_engine;
pub mod model_ir;
pub mod quantizer;

pub use float_engine::Tensor2D;
pub use model_ir::{LayerSpec, ModelGraph, Precision, Shape};
pub use quantizer::{QuantParams, QuantizedModel};

/// Number of activity classes, including the null class.
pub const NUM_CLASSES: usize = 15;

/// Class id of the null (background) class.
pub const NULL_CLASS: u8 = 0;
