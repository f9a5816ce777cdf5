//! Spectral forward solver and single-snapshot coefficient reconstruction for
//! `u_t - div(a grad u) = 0` on the unit square with homogeneous Dirichlet
//! data, discretized with P1 finite elements.

pub mod eigen;
pub mod error;
pub mod fem;
pub mod fit;
pub mod harness;
pub mod heat;
pub mod mesh;
pub mod sparse;
pub mod spectral;
pub mod transport;

pub use error::{Error, Result};
