//! Spectral analysis, biorthogonal families and moving-control synthesis for a
//! one-dimensional fractional wave equation with memory.
//!
//! The crate is `no_std` with `alloc`. Everything here is pure computation; file
//! formats, configuration and the command line live in the `fracmem` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod biorthogonal;
pub mod control;
pub mod dd;
pub mod error;
pub mod galerkin;
pub mod linalg;
pub mod memory;
pub mod moving;
pub mod product;
pub mod quad;
pub mod special;
pub mod spectrum;

pub use error::{Error, Result};
pub use num_complex::Complex64;
