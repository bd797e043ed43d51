//! Plug-and-play image restoration with a reinforcement-learning denoiser prior.
//!
//! The library couples a half-quadratic-splitting restoration loop (spectral
//! deconvolution for deblurring, conjugate gradients for super-resolution)
//! with a pixel-wise denoising agent trained by clipped proximal policy
//! optimization. See the `pnp` module for the solver loop, `denoiser` for the
//! agent, and `ppo` for training.

pub mod config;
pub mod denoiser;
pub mod error;
pub mod fft2;
pub mod forward;
pub mod image;
pub mod nn;
pub mod pnp;
pub mod ppo;

pub use error::{Error, Result};
