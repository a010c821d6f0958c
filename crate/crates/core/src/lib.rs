//! Numerical laboratory for hyperbolic affine spheres driven by a cubic
//! differential `λ·U₀`.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`wang`] solves Wang's equation `4ψ_{zz̄} + 4|U|²e^{−2ψ} − 2e^ψ = 0` for the
//!    conformal factor of the affine metric, on flat tori and planar Dirichlet
//!    domains, together with the sub/supersolution barriers that bracket it.
//! 2. [`frame`] integrates the structure equations of the affine sphere along
//!    geodesics of the flat metric `|U₀|^{2/3}` and extracts the holonomy
//!    eigenvalues.
//! 3. [`asymptotics`] implements the contraction (Picard) map for the perturbed
//!    diagonal system and checks the eigenvalue brackets
//!    `ξᵢ ≍ exp(λ^{1/3} μᵢ L)`, where `μᵢ` are the roots of `μ³ − 3μ − 2cos 3θ`.
//! 4. [`surface`] reconstructs the immersion itself and exports meshes.
//!
//! [`verify`] bundles the end-to-end checks used by the command line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod cubic;
pub mod eigen;
pub mod error;
pub mod field;
pub mod frame;
pub mod stencil;
pub mod surface;
pub mod verify;
pub mod wang;

pub use num_complex::Complex64;

pub use crate::cubic::{mu_roots, predicted_log_spectrum, supersolution_root, MuTriple, SpectralTriple, SupersolutionRoot};
pub use crate::error::{Error, Result};
pub use crate::field::{CubicDifferential, GeodesicSegment, Grid2D, Region, ScalarField};
pub use crate::frame::{FrameMatrix, HolonomyResult, Mat3, StructureMatrices};
pub use crate::wang::{Barrier, BoundaryCondition, WangProblem};
