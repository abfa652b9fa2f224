//! Multi-patch discontinuous Galerkin isogeometric solvers for time-domain
//! wave propagation, together with the analysis tools used to study them.
//!
//! The crate is organised bottom-up:
//!
//! - [`splines`]: knot vectors, B-spline evaluation, Greville abscissae,
//!   knot smoothing and n-width optimal knots.
//! - [`quadrature`]: Gauss–Legendre and composite span-aligned rules.
//! - [`refops`]: reference-patch matrices, Kronecker application and
//!   trace/inverse inequality constants.
//! - [`geometry`]: analytic patch mappings, metric terms and multi-patch meshes.
//! - [`wadg`]: weight-adjusted (and exact) curvilinear mass inversion.
//! - [`semidiscrete`]: energy-stable DG right-hand sides for advection and the
//!   first- and second-order acoustic wave equation.
//! - [`timeint`]: low-storage RK45 and CFL timestep estimates.
//! - [`analysis`]: spectra, dispersion relations, eigenvalue and projection
//!   studies.
//! - [`cli`]: configuration, experiment drivers and tabular output.
//!
//! Data-parallel work (parameter sweeps, per-patch evaluation) goes through
//! [`par`], which uses rayon when the `parallel` feature is enabled and plain
//! iterators otherwise.

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose, and dense
// numerical kernels index several arrays by the same loop counter.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod par;
pub mod quadrature;
pub mod refops;
pub mod semidiscrete;
pub mod splines;
pub mod timeint;
pub mod wadg;

pub use error::{Error, Result};
