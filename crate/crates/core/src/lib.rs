//! Finite element operator networks.
//!
//! A ReLU network maps forcing parameters `ω` to the coefficients of a
//! finite element expansion and is trained, without reference solutions,
//! by minimizing the Galerkin residual `|A α̂(ω) − F(ω)|`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod fem;
pub mod forcing;
pub mod mesh;
pub mod neural;
pub mod quadrature;
pub mod sparse;
pub mod spectral;
pub mod training;

pub use error::{Error, MeshLoadError, Result};
