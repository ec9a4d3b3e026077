//! Core numerics for force-to-displacement surrogate modelling.
//!
//! * [`domain`]: regular grids, masked embeddings, hexahedral meshes and the
//!   padded volumetric tensors exchanged with the network.
//! * [`fem`]: Saint-Venant-Kirchhoff finite elements, Jacobi-preconditioned
//!   conjugate gradients and an incremental Newton-Raphson driver.
//! * [`datagen`]: random load sampling, dataset generation and the binary
//!   dataset format.
//! * [`pod`]: snapshot POD bases and Galerkin-reduced Newton solves.
//! * [`scenario`]: JSON scenario files tying the above together.

pub mod datagen;
pub mod domain;
pub mod error;
pub mod fem;
pub mod pod;
pub mod scenario;

mod digest;

pub use digest::{hex, sha256};
pub use error::{Error, Result};
