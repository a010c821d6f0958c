//! Shared fixtures for the benchmarks.

use holonomy_core::asymptotics::PerturbedSystem;
use holonomy_core::verify::torus_field;
use holonomy_core::{Complex64, CubicDifferential, GeodesicSegment, Mat3, ScalarField, WangProblem};

/// Solved torus field for `U = 2λ`.
pub fn torus(lambda: f64, n: usize) -> (ScalarField, CubicDifferential) {
    torus_field(lambda, n).expect("torus fixture")
}

pub fn torus_problem(lambda: f64, n: usize) -> WangProblem {
    let (psi, u) = torus(lambda, n);
    WangProblem::torus(u, psi.grid).expect("torus problem")
}

pub fn segment(theta: f64, length: f64) -> GeodesicSegment {
    GeodesicSegment::new(Complex64::new(0.2, 0.3), length, theta, 1e-3).expect("segment")
}

/// Constant perturbation with `‖B‖ = 10⁻²`.
pub fn synthetic_system(intervals: usize) -> PerturbedSystem {
    let b = Mat3::from_fn(|i, j| Complex64::new(((3 * i + j) as f64).sin(), ((i + 2 * j) as f64).cos()));
    let b = b.unscale(100.0 * b.norm());
    PerturbedSystem::constant(0.3, 10.0, 1.0, b, intervals).expect("synthetic system")
}
