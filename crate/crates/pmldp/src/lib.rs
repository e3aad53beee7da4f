//! Numerical laboratory for a stochastic generalized porous medium equation
//!
//!   dX = (L Psi(X) + Phi(X)) dt + eps Q dW
//!
//! on the unit interval with Dirichlet boundary, together with its controlled
//! (skeleton) equation, the small-noise and short-time rate functionals, and a
//! Monte-Carlo harness that probes the associated large-deviation asymptotics
//! at desk scale.
//!
//! Module map:
//! * [`spaces`] - grid, Dirichlet Laplacian, L^p and H^{-1} norms, sine modes.
//! * [`model`] - nonlinearities Psi/Phi, drift assembly, structural checks.
//! * [`noise`] - spectral noise operator Q, Wiener sampling, controls,
//!   piecewise-linear path approximation.
//! * [`solver`] - semi-implicit time stepping for the stochastic, projected,
//!   interpolated-noise and rescaled equations.
//! * [`rate`] - control-energy rate functionals (endpoint optimization and
//!   the closed-form short-time functional).
//! * [`harness`] - path-parallel Monte-Carlo experiments (ball probabilities,
//!   slope regressions, exponential moments, approximation sweeps).
//! * [`config`] / [`cli`] - TOML experiment configs and the `pmldp` binary.
//!
//! Path batches run data-parallel through rayon by default; building with
//! `--no-default-features` swaps in a sequential fallback with identical
//! results (reductions always happen over the index-ordered path list).

pub mod cli;
pub mod config;
pub mod error;
pub mod exec;
pub mod harness;
pub mod model;
pub mod noise;
pub mod rate;
pub mod solver;
pub mod spaces;

pub use error::{Error, Result};
