//! Anisotropic Minkowski functionals of binary voxel volumes, their
//! fractional-anisotropy and orientation histograms, and a repeated-split
//! regression harness for predicting a scalar target from them.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the common choices.

#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::manual_is_multiple_of
)]

pub mod anisotropy;
pub mod config;
pub mod error;
pub mod features;
pub mod kernelgen;
pub mod minkowski;
pub mod phantom;
pub mod pipeline;
pub mod regression;
pub mod scalar;
pub mod volume_io;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Kernel64 = kernelgen::Kernel<f64>;
pub type Kernel32 = kernelgen::Kernel<f32>;
pub type AMFResponses64 = minkowski::AMFResponses<f64>;
pub type AMFResponses32 = minkowski::AMFResponses<f32>;
pub type AnisotropyMap64 = anisotropy::AnisotropyMap<f64>;
pub type AnisotropyMap32 = anisotropy::AnisotropyMap<f32>;
pub type LinearModel64 = regression::LinearModel<f64>;
