//! Numerical machinery for fully nonlinear path-dependent PDEs and zero-sum
//! path-dependent stochastic differential games.
//!
//! The toolkit works on a discretized path space: segments of d-dimensional
//! paths on a uniform grid, compared in the sup norm and the `d_inf` metric
//! ([`path_space`]). On top of it sit
//!
//! - smooth gauge functionals with closed-form pathwise derivatives and
//!   proven bounds ([`gauge`]),
//! - numeric Dupire derivatives and functional Ito residual testing
//!   ([`functional_calculus`]),
//! - a constructive Ekeland–Borwein–Preiss maximization routine with exact
//!   certificates on finite domains ([`variational`]),
//! - Euler–Maruyama simulation of controlled path-dependent SDEs
//!   ([`dynamics`]) and a regression Monte Carlo BSDE solver with its
//!   backward semigroup ([`bsde`]),
//! - Hamiltonians, Isaacs checking and DPP-based game values ([`game`]),
//! - residual checkers and comparison/stability harnesses for classical and
//!   viscosity solutions ([`viscosity`]),
//! - a catalog of built-in test problems with known oracles ([`catalog`]).
//!
//! All randomness flows from one `u64` seed through per-sample streams
//! ([`rng`]), so every run is reproducible regardless of worker count.

pub mod bsde;
pub mod catalog;
pub mod dynamics;
pub mod error;
pub mod functional_calculus;
pub mod game;
pub mod gauge;
pub mod path_space;
pub mod regression;
pub mod rng;
pub mod sampling;
pub mod variational;
pub mod viscosity;

#[cfg(test)]
pub(crate) mod test_support;

pub use error::{Error, Result};
pub use path_space::{Grid, Path};
