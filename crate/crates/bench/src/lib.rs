//! Benchmark harness: telemetry sampling, the toy diffusion workload,
//! dataset preparation, file formats, reports and the `cropbench` CLI.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod imageio;
pub mod report;
pub mod sampler;
pub mod trace_csv;
pub mod workload;

pub use error::{BenchError, Result};
