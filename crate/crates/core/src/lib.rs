//! Numerical laboratory for boundary unique continuation of elliptic
//! equations on quasiconvex Lipschitz graph domains.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod acceptance;
pub mod coefficients;
pub mod config;
pub mod dimension;
pub mod error;
pub mod frequency;
pub mod geometry;
pub mod linalg;
pub mod nodal;
pub mod pipeline;
pub mod quadrature;
pub mod solver;
pub mod whitney;

pub use error::{Error, Result};
