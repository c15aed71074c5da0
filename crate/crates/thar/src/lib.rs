//! Files, timing, sweeps, reports and the command line around [`thar_core`].

pub mod cli;
pub mod config;
pub mod dataset;
pub mod history;
pub mod model_io;
pub mod profiles;
pub mod report;
pub mod sensor_csv;
pub mod sweep;
pub mod timing;

pub use thar_core;
