//! Spectral Galerkin tools for parabolic SPDEs on `[0, 1]` with Neumann
//! boundary conditions and state-dependent, spatially coloured noise.
//!
//! * [`basis`]: cosine basis, quadrature and grid functions.
//! * [`operators`]: coefficient operators and the covariance fields they induce.
//! * [`ou`]: time-integrated Ornstein-Uhlenbeck covariances and matrix inequalities.
//! * [`kernel`]: the frozen-at-target Gaussian kernel and its Monte Carlo integrals.
//! * [`sim`]: exponential-Euler simulation of the spectral system.
//! * [`verify`]: named verification suites and their reports.

pub mod basis;
pub mod error;
pub mod fit;
pub mod kernel;
pub mod operators;
pub mod ou;
pub mod sim;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
