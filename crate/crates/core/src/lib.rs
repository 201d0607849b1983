//! Numerical laboratory for Neumann problems of viscous Hamilton–Jacobi
//! equations with superlinear gradient growth, the Bernstein/Bochner
//! machinery behind their a priori estimates, and stationary mean field games.

pub mod bernstein;
pub mod cli;
pub mod error;
pub mod estimates;
pub mod fields;
pub mod geometry;
pub mod hjb;
pub mod linalg;
pub mod mfg;
pub mod sources;
pub mod stats;

pub use error::{Error, Result};
