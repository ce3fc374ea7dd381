//! Exact and linear-time inversion of block Toeplitz matrices whose symbol is
//! a rational (ARMA-type) spectral density `w = h h^*`.
//!
//! The symbol is described by the partial fractions of `h(z)^{-1}` in
//! [`symbol::RationalSymbolSpec`]. From there:
//!
//! * [`coefficients`] produces the power-series and Fourier data,
//! * [`series_inverse`] evaluates the general series formula for the inverse,
//! * [`closed_form`] evaluates the finite closed form,
//! * [`fast_solver`] solves `T_n(w) Z = Y` in `O(n)` operations,
//! * [`oracle`] and [`bench`] hold reference solvers and timing helpers.

extern crate self as toeplitz_arma;

pub mod bench;
pub mod cli;
pub mod closed_form;
pub mod coefficients;
pub mod error;
pub mod fast_solver;
pub mod io;
pub mod linalg;
pub mod oracle;
pub mod series_inverse;
pub mod symbol;

pub use error::{Error, Result};

#[cfg(test)]
#[path = "../tests/common/fixtures.rs"]
pub(crate) mod test_fixtures;
