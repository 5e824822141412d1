//! Numerical laboratory for the surface evolution law `v = h + u⊥` on graphs.
//!
//! The same motion law is implemented in three mutually checking forms:
//!
//! * the pointwise graphical PDE, solved by finite differences ([`mcfsolve`])
//!   and residual-checked node by node ([`weakform::pde_residual`]),
//! * Brakke's weak integral formulation, evaluated against closed-form test
//!   functions ([`weakform`]),
//! * the Allen-Cahn phase-field approximation with transport ([`allencahn`]),
//!   whose extracted interface feeds back into the sharp-interface checks.
//!
//! Supporting machinery: space-time grids and the discrete parabolic Hölder
//! seminorm ([`grid`]), graph geometry in divergence form ([`geometry`]),
//! parabolic mollification with clipped signed distances and nearest-point
//! projections ([`mollify`]), binary field dumps ([`fields`]), and an
//! experiment runner ([`experiments`], driven by the `lab` binary).

pub mod allencahn;
pub mod config;
pub mod error;
pub mod experiments;
pub mod expr;
pub mod fields;
pub mod geometry;
pub mod grid;
pub mod mcfsolve;
pub mod mollify;
pub mod testfn;
pub mod tol;
pub mod vecn;
pub mod weakform;

pub use error::{LabError, Result};
