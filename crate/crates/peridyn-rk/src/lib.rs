//! Reproducing-kernel collocation for the linearized state-based peridynamic
//! Navier equation on rectilinear grids, with a quasi-discrete variant, a
//! Fourier-symbol stability analyzer and a manufactured-solution harness.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod bench;
pub mod cli;
mod gauss;
pub mod grid;
pub mod kernel;
pub mod nlops;
pub mod quad;
pub mod rkbasis;
pub mod symbols;

pub use gauss::{gauss_legendre, Compensated};
