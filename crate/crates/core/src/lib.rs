//! Space-time trace finite element method for scalar parabolic PDEs on
//! evolving closed curves in 2D.
//!
//! The evolving curve is given implicitly as the zero level of a scalar
//! level set function on a fixed background triangulation. The solver
//! marches over space-time slabs: on each slab the active (cut) elements
//! are detected, a parametric mesh deformation lifts the piecewise linear
//! zero level to a higher order surface approximation, and a stabilized
//! bilinear form is assembled and solved with a sparse direct factorization.

pub mod assembly;
pub mod cutgeom;
pub mod deform;
pub mod error;
pub mod femspace;
pub mod jet;
pub mod levelset;
pub mod mesh;
pub mod postproc;
pub mod quadrature;
pub mod scenes;
pub mod solver;
pub mod sparse;

pub use error::{Error, Result};
