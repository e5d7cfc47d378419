//! Spectral-Galerkin simulation of the stochastic damped wave equation
//!
//!   m u'' = -u' + Δu + φ(u) + Q dW/dt   on a Dirichlet box,
//!
//! its small-mass (heat) limit, and the functionals, metrics and Monte Carlo
//! probes used to study mixing uniformly in m.

pub mod config;
pub mod domain;
pub mod dynamics;
pub mod error;
pub mod functionals;
pub mod metrics;
pub mod noise;
pub mod nonlinearity;
pub mod probes;

pub use error::{Error, Result};
