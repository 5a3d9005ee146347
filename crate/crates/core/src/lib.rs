//! Quasi-periodic invariant 2-tori of autonomous Hamiltonian flows.
//!
//! Tori are represented through invariant curves of a time-`T` flow map,
//! split into `m` shooting legs, and computed with a quadratically
//! convergent Newton method built on an adapted symplectic frame. The
//! stable bundle of each torus is computed alongside it, and whole
//! families are produced by pseudo-arclength-style continuation.
//!
//! Module map:
//! - [`symplectic_model`]: symplectic structure and the spatial restricted three-body model
//! - [`torus_rep`]: Fourier/grid representation of periodic functions and torus states
//! - [`cohomology`]: small- and non-small-divisor cohomological equations
//! - [`flow`]: RKF7(8) integration with first and second variational equations
//! - [`frame`]: adapted symplectic frame and torsion
//! - [`newton`]: torus and bundle Newton steps, refinement loop
//! - [`continuation`]: tangents and family continuation
//! - [`seeds`]: Lyapunov periodic orbits, seeding, Poincaré conversion
//! - [`observables`]: Calabi invariants, bundle distances, globalized surfaces
//! - [`persistence`]: checksummed torus records and family indices

pub mod cohomology;
pub mod continuation;
pub mod error;
pub mod flow;
pub mod frame;
mod linalg;
pub mod newton;
pub mod observables;
pub mod persistence;
pub mod seeds;
pub mod symplectic_model;
pub mod torus_rep;

#[cfg(test)]
mod testutil;

pub use error::{Error, ErrorClass, Result};
