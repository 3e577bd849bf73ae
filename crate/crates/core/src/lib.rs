//! Pure numerical core of a desk-scale generative-model benchmarking kit.
//!
//! Everything here is `no_std` + `alloc`: diffusion noising and sampling,
//! a small noise-prediction network with analytic gradients, LoRA
//! adapters, prompt weighting, a seeded perceptual distance, dataset
//! linting, and energy accounting over telemetry traces. IO, threads and
//! file formats live in the `cropbench` crate.
#![no_std]
// Validation uses `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod dataset;
pub mod denoiser;
pub mod energy;
pub mod error;
pub mod grid;
pub mod lora;
pub mod lpips;
pub mod nn;
pub mod optim;
pub mod prompt;
pub mod rng;
pub mod sample;
pub mod schedule;
pub mod telemetry;
pub mod train;

pub use error::{Error, Result};
