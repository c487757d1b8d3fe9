//! Mixed finite element solver for post-buckling of simply supported plates
//! under in-plane compression, with branch continuation and a POD-Galerkin
//! reduced order model.
//!
//! The fourth-order plate system is split into four coupled second-order
//! fields (deflection, its Laplacian, stress potential, its Laplacian) so
//! standard C⁰ Lagrange elements apply. On top of the full-order solver the
//! crate provides:
//!
//! - buckling eigenvalues and eigenvalue curves vs. the load parameter,
//! - branch tracing over the load range with bifurcation detection,
//! - two-parameter sweeps over nonuniform in-plane load profiles,
//! - an offline/online reduced order pipeline with exact tensor projection
//!   of the quadratic nonlinearity.
//!
//! Start from the `examples/` directory; each example exercises one major
//! capability end to end. The `vkplate` binary drives the same pipeline
//! from a config file.

pub mod assembly;
pub mod cli;
pub mod config;
pub mod continuation;
pub mod eigen;
pub mod error;
pub mod fespace;
pub mod mesh;
pub mod output;
pub mod quadrature;
pub mod rom;
pub mod solver;
pub mod validate;
pub mod sparse;

pub use error::{Result, VkError};
