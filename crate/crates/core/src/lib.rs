//! Exact quench dynamics of long-range XY spin chains and randomized
//! measurement estimators for entanglement asymmetry and Frobenius distance.
//!
//! Units: ħ = 1, energies and rates in rad/s, times in seconds.

// `!(x >= 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod hamiltonian;
pub mod numfmt;
pub mod pipeline;
pub mod protocol;
pub mod rng;
pub mod shadows;
pub mod spin;
pub mod stats;

pub use error::{Error, Result};

/// Software version recorded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type C64 = num_complex::Complex64;
pub type CMatrix = nalgebra::DMatrix<C64>;
