//! Kernels of one-dimensional periodic diffusions computed by explicit
//! finite-difference schemes, together with the machinery to measure how fast
//! they converge as the lattice is refined.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice`] dyadic periodic grids, distances and momentum sets;
//! * [`coefficients`] volatility and drift families of prescribed smoothness;
//! * [`generator`] the central-difference Markov generator;
//! * [`propagator`] semidiscrete (`exp(tL)`) and explicit Euler kernels;
//! * [`spectral`] exact constant-coefficient kernels via Fourier series;
//! * [`dyson`] path expansion of the kernel and the exact three-point identities;
//! * [`harness`] multi-level convergence campaigns and rate fits;
//! * [`cli`] configuration, experiment dispatch and the verification suites.

pub mod cli;
pub mod coefficients;
pub mod dump;
pub mod dyson;
mod error;
mod expm;
pub mod generator;
pub mod harness;
pub mod lattice;
pub mod propagator;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};

/// Dense real matrix type used for kernels and their derivatives.
pub type Matrix = nalgebra::DMatrix<f64>;
