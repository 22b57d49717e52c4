//! Pseudospectral simulation of the 2D stochastic Navier-Stokes equations in
//! vorticity form on the torus, with tooling for Freidlin-Wentzell large
//! deviations: skeleton/controlled equations, rate-function optimization,
//! small-noise Monte Carlo and numerical probes of the uniform estimates.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod biot_savart;
pub mod error;
pub mod heat_kernel;
pub mod ldp;
pub mod noise;
pub mod solver;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
