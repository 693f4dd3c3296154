//! Time-dependent Ginzburg–Landau simulation in the Lorentz gauge on voxel
//! domains, with a Galerkin-truncated variant and energy/stability diagnostics.

pub mod config;
pub mod diagnostics;
pub mod domain;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod galerkin;
pub mod io;
pub mod ops;
pub mod solvers;
#[cfg(test)]
mod testutil;

pub use domain::{Axis, DomainKind, VoxelDomain};
pub use error::{Error, Result, Violation};
pub use fields::{AppliedField, CenterField, EdgeField, FaceField, OrderParameterField, ScalarField, VectorPotentialField};
