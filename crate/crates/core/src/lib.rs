//! Numerical core for studying two-layer networks trained by gradient descent
//! in the neural tangent kernel regime.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs; randomness is always passed in as an explicit seed.
//!
//! - [`network`]: the network `g_θ(x) = M^{-1/2} Σ a_m σ(⟨b_m, x⟩ + γ c_m)`,
//!   symmetric initialization, gradients and Taylor remainders.
//! - [`kernels`]: empirical and limit NTK, Gram assembly with optional PSD repair.
//! - [`tangent`]: kernel gradient descent, the tangent predictor and the
//!   coupling diagnostics between network, tangent model and kernel iterate.
//! - [`spectrum`]: Nyström surrogates of the integral operator, effective
//!   dimension, decay fits, source-condition targets and covariance concentration.
//! - [`trainer`]: full-batch gradient descent and the weight-decomposition identity.
//! - [`bounds`]: closed-form envelopes (stopping time, widths, weight radius, rates).
//! - [`data`]: synthetic datasets drawn from a spectral surrogate and excess risk.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod activation;
pub mod bounds;
pub mod data;
pub mod error;
pub mod fit;
pub mod kernels;
pub mod linalg;
pub mod network;
pub mod rng;
pub mod spectrum;
pub mod tangent;
pub mod trainer;

pub use activation::Activation;
pub use error::{Error, Result};
pub use kernels::{KernelKind, KernelMatrix};
pub use network::{InputPoint, NetworkConfig, ParamBlocks, Theta};
pub use spectrum::{SourceTarget, SpectralModel};
