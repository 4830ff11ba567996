//! Monte Carlo simulation and verification of sticky reflected distorted
//! Brownian motion on bounded domains with smooth boundary.
//!
//! The process moves as Brownian motion with drift `½∇ln α` inside the
//! domain, and on the boundary it may diffuse tangentially while being
//! pushed back with strength `α/β`. Its invariant measure is
//! `μ = α dλ + β dσ`, so it spends a positive fraction of time on the
//! boundary.
//!
//! Module map:
//! - [`geometry`]: level-set domains, normals, projections, curvature.
//! - [`measures`]: densities, the reference measure, condition screening.
//! - [`generator`]: the Wentzell generator in split and compact form.
//! - [`schemes`]: time-change, direct sticky and surface-only integrators.
//! - [`oracle`]: exact one-dimensional sticky Brownian motion.
//! - [`observables`]: occupation fractions, ergodic averages, residuals.
//! - [`scenario`], [`export`], [`run`]: configuration files, outputs and
//!   the subcommand driver used by the CLI.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod export;
pub mod expr;
pub mod field;
pub mod generator;
pub mod geometry;
pub mod linalg;
pub mod measures;
pub mod observables;
pub mod oracle;
pub mod quadrature;
pub mod rng;
pub mod run;
pub mod scenario;
pub mod schemes;
pub mod stats;

pub use linalg::{Matrix, Vector, MAX_DIM};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("gradient of the level set vanishes at {0:?}")]
    DegenerateGradient(Vector),
    #[error("point {point:?} is not on the boundary (|F| = {level:e})")]
    NotOnBoundary { point: Vector, level: f64 },
    #[error("projection onto the boundary diverged from {0:?}")]
    ProjectionDiverged(Vector),
    #[error("boundary weight β vanishes at {0:?}")]
    ZeroBeta(Vector),
    #[error("interior density α vanishes at {0:?}")]
    ZeroAlpha(Vector),
    #[error("quadrature not converged: {0}")]
    QuadratureNotConverged(String),
    #[error("no rejection envelope for density `{0}`")]
    EnvelopeUnknown(String),
    #[error("internal time budget exhausted before reaching horizon {0}")]
    HorizonNotReached(f64),
    #[error("window too short: {0}")]
    WindowTooShort(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("path {path} aborted: {reason}")]
    PathAborted { path: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
