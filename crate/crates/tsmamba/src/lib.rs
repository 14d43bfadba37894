//! File formats, data handling, training orchestration and benchmarks on
//! top of `tsmamba-core`.

pub mod artifacts;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod dataset;
mod error;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
