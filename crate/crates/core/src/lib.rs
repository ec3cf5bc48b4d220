//! Pick-or-Mix (PiX) dynamic channel sampling.
//!
//! The crate is split into five layers:
//!
//! * [`tensor`]: dense NCHW tensors, the PXT1 file format and seeded tensor creation.
//! * [`rng`]: the reproducible xoshiro256** generator everything random flows through.
//! * [`pix`]: the operator itself (context aggregation, probability prediction,
//!   channel partitioning and per-pixel fusion), forward and backward.
//! * [`costmodel`]: analytic FLOP/memory accounting for primitives, attention-style
//!   modules and whole networks described by [`costmodel::NetworkSpec`] files.
//! * [`nn`]: a small training stack (direct convolution, SGD) for desk-scale experiments.

pub mod costmodel;
mod error;
pub mod nn;
pub mod pix;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use pix::{OpMode, Activation, PixConfig, PixParams};
pub use rng::{Prng, RngSeed};
pub use tensor::{Dims, Real, Tensor};
