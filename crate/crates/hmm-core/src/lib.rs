//! Two-scale finite element engine for the homogenization of 2D linear
//! elastic solids under plane strain.
//!
//! The macro stiffness is sampled on periodic microdomains centered at the
//! macro quadrature points (stiffness-transfer mode), or assembled from the
//! homogenized elasticity tensor computed by unit strain states (tensor
//! mode); the two routes agree to solver precision. On top of the solver sit
//! the measurement tools: norms, overkill-reference error studies, fitted
//! convergence orders, superconvergent patch recovery and refinement
//! schedules.

pub mod error;
pub mod fem;
pub mod homogenize;
pub mod macroscale;
pub mod material;
pub mod mesh;
pub mod micro;
pub mod postprocess;
pub mod reference;
pub mod spr;
pub mod vtk;

pub use error::{Error, Result};

// the sparse linear algebra backend, re-exported for downstream verification
// code that feeds the solver interfaces directly
pub use faer;
