//! Strict minimum message length (SMML) estimators for exponential families
//! with continuous sufficient statistics.
//!
//! The partition of an SMML estimator is the set of argmax cells of the affine
//! scores `λᵢ(x) = log qᵢ + x·θᵢ − ψ(θᵢ)`, so an estimator with `n` cells is
//! described by its `n` assertions and coding probabilities. This crate builds
//! those cells, solves the stationarity equations for the parameters, runs a
//! discrete brute-force oracle, and checks the first and second variation of
//! the expected code length numerically.

pub mod error;
pub mod geometry;
pub mod io;
pub mod models;
pub mod oracle;
pub mod quadrature;
pub mod solver;
pub mod variation;

pub use error::{Error, Result};
pub use geometry::{Estimator, Partition};
pub use models::{ExponentialFamilyModel, MarginalDensity, PriorSpec};
pub use solver::{Problem, SolveResult, SolverConfig};
