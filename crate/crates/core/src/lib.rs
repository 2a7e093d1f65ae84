//! Guaranteed two-sided bounds on the homogenized coefficient matrix of a
//! periodic scalar elliptic operator on a 3D cuboid cell.
//!
//! The upper bound comes from a conforming P1 finite element solution of the
//! cell problem. The lower bounds come from the complementary (flux) problem,
//! posed on a divergence-free space built from curls of P1 potentials, either
//! by solving it with conjugate gradients or by an FFT-diagonalized L²
//! projection of the primal flux.
//!
//! Module map:
//! - [`grid`]: periodic voxel grid with a Kuhn split of each voxel.
//! - [`coefficients`]: element-wise constant coefficient fields.
//! - [`operators`]: derivative matrices and matrix-free stiffness operators.
//! - [`krylov`]: conjugate gradients for consistent SPSD systems.
//! - [`homogenize`]: primal, dual and projected bounds.
//! - [`analysis`]: 3×3 eigenvalues, ordering certificates, convergence studies, reports.

pub mod analysis;
pub mod coefficients;
pub mod error;
pub mod grid;
pub mod homogenize;
pub mod krylov;
pub mod operators;
pub mod sym3;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{PeriodicGrid, Tetrahedron};
pub use sym3::Sym3;
