//! Two-stage generative pipeline over continuous signal representations.
//!
//! Stage 1 trains an asymmetric VAE: a CNN encoder maps discrete arrays
//! (images or occupancy voxel grids) to a grid latent, and a CNN decoder
//! expands the latent into basis fields at three spatial scales. A small
//! MLP reads signal values out at arbitrary coordinates by bilinearly
//! interpolating the fields coarse-to-fine. Stage 2 trains a denoising
//! diffusion prior over the learned latent space, so new signals can be
//! sampled at any resolution.

pub mod diffusion;
pub mod error;
pub mod field;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod vae;

pub use error::{DdmiError, Result};
pub use tensor::{DType, Element, Tensor};
