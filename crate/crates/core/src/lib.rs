//! Diffusion purification for unrolled MRI reconstruction.
//!
//! The crate covers the whole pipeline at desk scale: a multi-coil Cartesian
//! forward model, a small reverse-mode differentiation engine with the
//! convolutional denoiser and score networks, unrolled MoDL reconstruction
//! and its training variants, a variance-exploding score SDE with a
//! predictor-corrector sampler, diffusion purification with MMD-based
//! switching-time selection, adversarial and operator perturbations,
//! numerical checks of the KL-decay results, and image-quality metrics.

pub mod autodiff;
pub mod diffusion;
pub mod error;
pub mod forward_model;
pub mod metrics;
pub mod modl;
pub mod numerics;
pub mod perturbations;
pub mod purification;
pub mod theory;

#[cfg(test)]
mod testutil;

pub use autodiff::{NetworkParams, Tape, Tensor};
pub use error::{Error, Result};
pub use forward_model::{ForwardOperator, KSpaceMeasurements, SamplingMask};
pub use numerics::{ComplexImage, RngStream};
