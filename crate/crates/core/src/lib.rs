//! Closed-form diffusion generators and resampling-based inpainting on linear
//! manifolds.
//!
//! Data lives on `x₀ = A z₀` with orthonormal `A`. For this model the DDPM
//! reverse kernel has closed-form minimizers ([`generator`]), and repeated
//! resampling with an aligned generator contracts the inpainting error at a
//! rate set by the mask ([`inpainting`], [`analysis`]).

pub mod analysis;
pub mod diffusion;
pub mod error;
pub mod experiments;
pub mod generator;
pub mod inpainting;
pub mod linalg;
pub mod manifold;
pub mod mask;
pub mod model;
pub mod noise;
pub mod samples;
pub mod schedule;

pub use error::{Error, Result};
pub use manifold::{make_manifold, LinearManifold};
pub use mask::{validate_mask, InpaintMask, MaskValidity};
pub use model::{GeneratorModel, ModelKind};
pub use noise::{Gaussian, NoiseSource, NoiseStream, ZeroNoise};
pub use schedule::{make_schedule, AlignmentSchedule, DiffusionSchedule};
