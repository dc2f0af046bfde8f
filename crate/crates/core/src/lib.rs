//! Skipped-step diffusion sampling.
//!
//! A pretrained ε-prediction diffusion model can denoise from `x_t` directly to
//! `x_{t-m}` using the Gaussian posterior of the multi-step forward kernel
//! `q(x_t | x_{t-m})`. This crate implements that sampler next to DDPM, DDIM,
//! a DDIM/skipped-step mixture and the naive timestep-subset baseline, and
//! provides the machinery to check them: an analytic Gaussian oracle
//! denoiser with exact marginal propagation, a small trainable MLP, sample
//! based distances and a benchmark harness.
//!
//! Module map:
//!
//! - [`schedule`]: noise schedules and closed-form skip coefficients.
//! - [`forward`]: the seeded random source and forward/posterior sampling.
//! - [`denoiser`]: the ε-prediction interface, Gaussian oracle, MLP and training.
//! - [`samplers`]: step plans, the five reverse samplers and affine propagation.
//! - [`metrics`]: Gaussian W2, sliced Wasserstein, energy distance, MMD.
//! - [`data`]: toy dataset generators.
//! - [`bench`]: sampler × budget sweeps and cutoff ablations.
//! - [`verify`]: the analytic verification suite behind `skipstep verify`.

pub mod bench;
pub mod data;
pub mod denoiser;
mod error;
pub mod forward;
pub mod io;
pub mod metrics;
pub mod samplers;
pub mod schedule;
pub mod svg;
pub mod verify;

pub use error::{Error, Result};

/// A batch of samples, one row per sample.
pub type Batch = ndarray::Array2<f64>;
