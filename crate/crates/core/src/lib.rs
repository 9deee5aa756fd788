//! Multi-view conditioning for a small latent denoiser.
//!
//! Per-view latent grids are lifted into tri-planes, fused into a target-view
//! latent by cosine-weighted composited volume rendering, and injected into a
//! frozen denoiser through zero-initialized residual links.
//!
//! The crate is `no_std` with `alloc` when the default `std` feature is off.
//! Everything here is pure computation; file formats and the command line
//! live in the companion `tvf` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod camera;
pub mod diffusion;
pub mod error;
pub mod fusion;
pub mod injection;
pub mod lifting;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod real;
pub mod synthetic;
pub mod tensor;
pub mod triplane;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{Adam, Bindings, Graph, ParamSet, Tensor, Var};
