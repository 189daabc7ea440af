//! Space-time discontinuous Galerkin solver for the 2D incompressible
//! Navier-Stokes equations: `RT_k x P_k` in space, DG in time at left
//! Gauss-Radau nodes, with fully implicit and semi-implicit slab solvers.

pub mod analysis;
pub mod assembly;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod manufactured;
pub mod mesh;
pub mod quadrature;
pub mod solver;
pub mod spaces;
pub mod timedisc;

pub use error::{Error, Result};
