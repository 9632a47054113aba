//! Finite elements for `-ε²Δu + κ²u = f` with weighted equilibrated flux
//! a posteriori error estimation.
//!
//! The pipeline is: [`mesh`] → [`fem::solve`] → [`equilibration::reconstruct`]
//! → [`estimators`]. [`constants`] supplies the explicit inequality constants
//! and [`counterexample`] the 1D jump-dominated construction.

pub mod cases;
pub mod cli;
pub mod constants;
pub mod counterexample;
pub mod equilibration;
pub mod error;
pub mod estimators;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod poly;

pub use error::{Error, Result};
pub use mesh::{structured_triangle_mesh, uniform_interval_mesh, Mesh, VertexPatch};
