//! Concentration-point and blow-up-rate toolkit for the slightly
//! subcritical elliptic problem
//!
//! ```text
//! -Delta u + eps V u = N(N-2) u^((N+2)/(N-2)),  u > 0 in Omega,
//!  u = 0 on the boundary,
//! ```
//!
//! in dimension N >= 4 with V < 0. Peaks of low-energy solutions sit at
//! critical points of a reduced energy built from the domain's Green
//! function, and the peak heights follow power laws in eps (N >= 5) or a
//! logarithmic law (N = 4). This crate predicts those laws from Green
//! function data and validates the predictions against a radial solver.

pub mod cli;
pub mod config;
pub mod error;
pub mod greens;
pub mod interaction;
pub mod interp;
pub mod linalg;
pub mod ode;
pub mod pde;
pub mod profiles;
pub mod quad;
pub mod rates;
pub mod report;
pub mod special;
pub mod vect;

pub use error::{Error, Result};
