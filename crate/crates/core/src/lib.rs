//! Sparse-in-time optimal control of semilinear parabolic equations.
//!
//! The library solves tracking problems for reaction-diffusion equations
//! of the form
//!
//! ```text
//!   dy/dt - Δy + a(x) y + f(x,t,y) = g + u χ_ω,   ∂y/∂n = 0,   y(0) = y0,
//! ```
//!
//! where the control `u` acts on a subregion `ω` and is penalized by the
//! time integral of its spatial L² norm. That penalty drives the optimal
//! control to switch off identically on time intervals, and eventually for
//! good: past a finite shutdown time the control is exactly zero. Long
//! horizons are handled by solving a sequence of growing finite-horizon
//! problems with zero-extension warm starts and monitoring cross-horizon
//! convergence diagnostics.
//!
//! Module map:
//! - [`model`]: problem data, nonlinearity families, assumption checks
//! - [`discretize`]: meshes, discrete operators, coercivity / embedding constants
//! - [`forward`]: implicit-Euler solver for the state equation plus decay probes
//! - [`adjoint`]: backward linearized solver and the reduced gradient
//! - [`optimize`]: proximal-gradient solver, multiplier extraction, KKT checks
//! - [`horizon`]: growing-horizon continuation and convergence monitors
//! - [`config`]: run configuration shared by the CLI and the browser demo
//! - [`io`]: CSV / binary trajectory formats and report serialization

// indexed loops over several same-length arrays read better than zipped
// iterator chains in the numerical kernels
#![allow(clippy::needless_range_loop)]

pub mod adjoint;
pub mod config;
pub mod discretize;
pub mod error;
pub mod expr;
pub mod field;
pub mod forward;
pub mod horizon;
pub mod io;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod rng;

pub use error::SolverError;
