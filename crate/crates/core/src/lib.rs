//! Numerical laboratory for central limit theorems of `L^p`-type moduli of
//! continuity of Gaussian processes with stationary increments.
//!
//! The statistic under study is
//!
//! ```text
//! I(f, h) = ∫_a^b f((G(x+h) - G(x)) / σ(h)) dx
//! ```
//!
//! for a Gaussian process `G` with increment variance `σ²`. The crate
//! computes its exact variance through the Hermite expansion of `f`, the
//! small-`h` asymptotics of the kernel moments that drive it, and checks
//! asymptotic normality by Monte Carlo on exactly simulated paths.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod format;
pub mod harness;
pub mod hermite;
pub mod kernel;
pub mod quadrature;
pub mod sigma;
pub mod simulate;
pub mod variance;

pub use error::{Error, Result};
pub use sigma::{Family, IncrementVarianceSpec, StructureReport};
