//! Reliability-guided diffusion sampling and uncertainty-aware candidate
//! selection for low-field to high-field image synthesis.
//!
//! A conditional DDPM sampler whose reverse step damps the predicted noise
//! where the denoiser is locally unstable ([`rgs`]), and a post-hoc fusion of
//! several stochastic reconstructions that discards outliers and suppresses
//! high-variance voxels ([`ucs`]). Denoisers are pluggable through
//! [`denoiser::DenoiserRegistry`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod degradation;
pub mod denoiser;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod rgs;
pub mod rng;
pub mod schedule;
pub mod ucs;
pub mod volume;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use schedule::NoiseSchedule;
pub use volume::ImageVolume;
