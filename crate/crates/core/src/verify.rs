//! End-to-end verification suites.
//!
//! `torus` runs every check on the exactly solvable constant family; `full`
//! adds the planar disk-model sweeps. Reports contain no timings, so repeated
//! runs serialize identically.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    char_poly_compare, contraction_certificate, eigenvalue_bracket, picard_fixed_point, segment_intervals, segment_report,
    PerturbedSystem, SegmentReport, BRACKET_SLACK,
};
use crate::cubic::{mu_roots, supersolution_root};
use crate::error::{Error, Result};
use crate::field::{CubicDifferential, GeodesicSegment, Grid2D, Region, ScalarField};
use crate::frame::{default_steps, path_independence_residual, FrameField, Mat3};
use crate::surface::{integrate_embedding, mesh_string, MeshFormat};
use crate::wang::{log_log_slope, verify_metric_asymptotics, MetricTable, WangProblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Torus,
    Full,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "torus" => Ok(Suite::Torus),
            "full" => Ok(Suite::Full),
            _ => Err(Error::invalid(format!("unknown suite {s:?} (expected \"torus\" or \"full\")"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: String,
    pub description: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub passed: bool,
}

impl Check {
    /// Passes when `value < upper`.
    pub fn below(id: &str, description: &str, value: f64, upper: f64) -> Self {
        Self { id: id.into(), description: description.into(), value, lower: None, upper: Some(upper), passed: value < upper }
    }

    /// Passes when `value > lower`.
    pub fn above(id: &str, description: &str, value: f64, lower: f64) -> Self {
        Self { id: id.into(), description: description.into(), value, lower: Some(lower), upper: None, passed: value > lower }
    }

    pub fn within(id: &str, description: &str, value: f64, lower: f64, upper: f64) -> Self {
        Self {
            id: id.into(),
            description: description.into(),
            value,
            lower: Some(lower),
            upper: Some(upper),
            passed: value >= lower && value <= upper,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
    pub passed: usize,
    pub failed: usize,
    pub all_passed: bool,
}

impl VerifyReport {
    fn new(suite: Suite, checks: Vec<Check>) -> Self {
        let passed = checks.iter().filter(|c| c.passed).count();
        let failed = checks.len() - passed;
        Self { suite, checks, passed, failed, all_passed: failed == 0 }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Disk model `U₀ = 2z` on `Disk(0, radius)` with one flat geodesic per λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiskSweepConfig {
    pub lambdas: Vec<f64>,
    pub n: usize,
    pub radius: f64,
    pub tolerance: f64,
    pub start: Complex64,
    pub theta: f64,
    #[serde(rename = "L")]
    pub length: f64,
}

impl Default for DiskSweepConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![1e3, 1e4, 1e5],
            n: 256,
            radius: 2.0,
            tolerance: 1e-9,
            start: Complex64::new(0.6, 0.0),
            theta: 0.4,
            length: 0.3,
        }
    }
}

/// Annulus `0.5 ≤ |z| ≤ 0.9`.
pub fn disk_compact() -> Region {
    Region::Annulus { center: Complex64::new(0.0, 0.0), inner: 0.5, outer: 0.9 }
}

/// Solve the disk model for each λ (in parallel) and report on the segment.
pub fn disk_segment_sweep(cfg: &DiskSweepConfig) -> Result<Vec<SegmentReport>> {
    cfg.lambdas
        .par_iter()
        .map(|&lambda| {
            let p = WangProblem::disk_model(lambda, cfg.n, cfg.radius)?;
            let sup = p.barriers(0.0)?.sup;
            let (psi, _) = p.solve_with_report(&ScalarField::constant(p.grid, sup), cfg.tolerance * sup.exp().max(1.0))?;
            let field = FrameField::new(&psi, &p.u);
            let seg = GeodesicSegment::new(cfg.start, cfg.length, cfg.theta, p.grid.default_clearance())?;
            segment_report(&field, &seg, segment_intervals(lambda, cfg.length))
        })
        .collect()
}

pub fn disk_metric_sweep(cfg: &DiskSweepConfig) -> Result<MetricTable> {
    let template = WangProblem::disk_model(cfg.lambdas[0], cfg.n, cfg.radius)?;
    verify_metric_asymptotics(&template, &disk_compact(), &cfg.lambdas, cfg.tolerance)
}

/// `ψ ≡ log(8λ²)/3` with `U₀ = 2` on the unit torus.
pub fn torus_field(lambda: f64, n: usize) -> Result<(ScalarField, CubicDifferential)> {
    let g = Grid2D::torus((0.0, 1.0), (0.0, 1.0), n, n)?;
    let u = CubicDifferential::constant(2.0, lambda)?;
    Ok((ScalarField::constant(g, (8.0 * lambda * lambda).ln() / 3.0), u))
}

fn fold_max(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, |a: f64, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) })
}

fn mu_checks(out: &mut Vec<Check>) {
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let (mut res, mut diff) = (0.0f64, 0.0f64);
    for k in 0..10_000 {
        let theta = 2.0 * PI * ((k as f64 * golden).fract()) - PI;
        let mu = mu_roots(theta);
        res = res.max(mu.residuals().iter().cloned().fold(0.0, f64::max));
        let mut want: Vec<f64> = (0..3).map(|j| 2.0 * (theta - 2.0 * PI * j as f64 / 3.0).cos()).collect();
        want.sort_by(|a, b| b.total_cmp(a));
        let got = mu.as_array();
        diff = diff.max((0..3).map(|i| (got[i] - want[i]).abs()).fold(0.0, f64::max));
    }
    out.push(Check::below("mu.residual", "max |μ³ − 3μ − 2cos3θ| over 10⁴ angles", res, 1e-12));
    out.push(Check::below("mu.closed_form", "max |μ − 2cos(θ − 2πk/3)|", diff, 1e-12));
}

fn supersolution_checks(out: &mut Vec<Check>) -> Result<()> {
    let r = supersolution_root(1.0, 10.0)?;
    out.push(Check::below("supersolution.exact", "|r(σ=1, λ=10) − 5|", (r.r - 5.0).abs(), 1e-12));
    let worst = fold_max([1e3, 1e4, 1e5].iter().map(|&l: &f64| {
        let r = supersolution_root(1.0, l).map(|r| r.r).unwrap_or(f64::NAN);
        let scale = l.powf(-2.0 / 3.0);
        (r * scale - 1.0).abs() / (2.0 * scale)
    }));
    out.push(Check::below("supersolution.asymptotic", "max |λ^{−2/3}r − 1| / (2σλ^{−2/3})", worst, 1.0 + 1e-12));
    Ok(())
}

fn wang_torus_checks(out: &mut Vec<Check>) -> Result<()> {
    let n = 128;
    let results: Result<Vec<(f64, usize)>> = [1.0, 8.0, 1000.0]
        .par_iter()
        .map(|&lambda| {
            let (exact, u) = torus_field(lambda, n)?;
            let p = WangProblem::torus(u, exact.grid)?;
            let b = p.barriers(0.0)?;
            let tol = 1e-9 * b.sup.exp().max(1.0);
            let inits = [
                ScalarField::constant(p.grid, b.sup),
                ScalarField::from_fn(p.grid, |z| {
                    b.sub.values[0] + 0.5 * (1.0 + (2.0 * PI * z.re).sin() * (2.0 * PI * z.im).cos())
                }),
            ];
            let mut dev = 0.0f64;
            let mut iters = 0;
            for init in &inits {
                let (psi, rep) = p.solve_with_report(init, tol)?;
                dev = dev.max(psi.max_abs_diff(&exact)?);
                iters = iters.max(rep.iterations);
            }
            Ok((dev, iters))
        })
        .collect();
    let results = results?;
    out.push(Check::below(
        "wang.torus_exact",
        "max |ψ − log(8λ²)/3|, λ ∈ {1, 8, 1000}",
        fold_max(results.iter().map(|r| r.0)),
        1e-10,
    ));
    out.push(Check::below(
        "wang.torus_iterations",
        "max Newton iterations",
        results.iter().map(|r| r.1).max().unwrap_or(0) as f64,
        25.5,
    ));
    Ok(())
}

fn torus_grid() -> Vec<(f64, f64, f64)> {
    let mut v = Vec::new();
    for lambda in [1.0, 64.0, 1000.0] {
        for theta in [0.0, PI / 6.0, PI / 4.0] {
            for length in [0.5, 1.0] {
                v.push((lambda, theta, length));
            }
        }
    }
    v
}

fn holonomy_checks(out: &mut Vec<Check>) -> Result<()> {
    let rows: Result<Vec<[f64; 6]>> = torus_grid()
        .par_iter()
        .map(|&(lambda, theta, length)| {
            let (psi, u) = torus_field(lambda, 16)?;
            let field = FrameField::new(&psi, &u);
            let seg = GeodesicSegment::new(Complex64::new(0.3, 0.2), length, theta, 1e-3)?;
            let fm = field.transport(&seg, default_steps(lambda, length))?;
            let h = crate::frame::holonomy_from_frame(&fm);
            let b = eigenvalue_bracket(&h, BRACKET_SLACK);
            let (d1, d2) = char_poly_compare(&fm, lambda, theta, length);
            Ok([
                h.log_spectrum.max_abs_diff(&h.predicted),
                h.det_drift,
                fold_max(b.rho.iter().map(|r| (r - 1.0).abs())),
                b.identity_error,
                d1,
                d2,
            ])
        })
        .collect();
    let rows = rows?;
    let col = |i: usize| fold_max(rows.iter().map(|r| r[i]));
    out.push(Check::below("holonomy.log_eigenvalues", "max |log ξᵢ − λ^{1/3}μᵢL| on the torus grid", col(0), 1e-6));
    out.push(Check::below("holonomy.det_drift", "max determinant drift", col(1), 1e-8));
    out.push(Check::below("bracket.rho", "max |ρᵢ − 1|", col(2), 1e-6));
    out.push(Check::below("bracket.identity", "max |ρ₁ρ₂ρ₃ / det Φ − 1|", col(3), 1e-10));
    out.push(Check::below("charpoly.torus_dev1", "max dev1 on the torus grid", col(4), 1e-8));
    out.push(Check::below("charpoly.torus_dev2", "max dev2 on the torus grid", col(5), 1e-8));
    Ok(())
}

fn picard_checks(out: &mut Vec<Check>) -> Result<()> {
    let (factor, _) = contraction_certificate(0.01, 1.0)?;
    out.push(Check::below("picard.certificate", "|factor(R=0.01, L=1) − 0.020404|", (factor - 0.020404).abs(), 1e-6));
    let b = Mat3::from_fn(|i, j| Complex64::new(((i * 3 + j) as f64 * 0.7).sin(), ((i + 2 * j) as f64 * 0.3).cos()));
    let b = b.unscale(b.iter().map(|v| v.norm()).fold(0.0, f64::max) * 100.0);
    let sys = PerturbedSystem::constant(0.4, 8.0, 1.0, b, crate::asymptotics::PICARD_SAMPLES)?;
    let mut worst = 0.0f64;
    for j in 0..3 {
        let col = picard_fixed_point(&sys, j, 30, false)?;
        let rk = sys.rk_column(j);
        let err = fold_max(rk.iter().enumerate().flat_map(|(k, a)| {
            let g = col.values[2 * k];
            (0..3).map(move |i| (a[i] - g[i]).norm())
        }));
        worst = worst.max(err / col.norm);
    }
    out.push(Check::below("picard.rk_agreement", "weighted |Picard − RK| / norm, ‖B‖ = 10⁻²", worst, 1e-6));
    let zero = PerturbedSystem::constant(0.4, 8.0, 1.0, Mat3::zeros(), 256)?;
    let col = picard_fixed_point(&zero, 0, 10, false)?;
    out.push(Check::below("picard.zero_perturbation", "iterations to the fixed point with B = 0", col.iterations as f64, 1.5));
    Ok(())
}

fn path_checks(out: &mut Vec<Check>) -> Result<()> {
    let (exact, u) = torus_field(1.0, 64)?;
    let p = WangProblem::torus(u.clone(), exact.grid)?;
    let psi = p.solve(&ScalarField::constant(p.grid, exact.values[0] + 0.3), 1e-9)?;
    let z0 = Complex64::new(0.2, 0.2);
    let z1 = Complex64::new(0.7, 0.6);
    let p1 = [z0, Complex64::new(z1.re, z0.im), z1];
    let p2 = [z0, Complex64::new(z0.re, z1.im), z1];
    let r = path_independence_residual(&psi, &u, &p1, &p2, 512)?;
    let bumped = ScalarField { grid: psi.grid, values: psi.values.iter().map(|v| v + 0.1).collect() };
    let rb = path_independence_residual(&bumped, &u, &p1, &p2, 512)?;
    out.push(Check::below("integrability.solved", "path-independence residual, solved torus ψ", r, 1e-8));
    out.push(Check::above("integrability.perturbed", "path-independence residual, ψ + 0.1", rb, 1e-3));
    Ok(())
}

fn surface_checks(out: &mut Vec<Check>) -> Result<()> {
    let (psi, u) = torus_field(1.0, 33)?;
    let patch = integrate_embedding(&psi, &u, None, Complex64::new(0.5, 0.5))?;
    let r = patch.report();
    out.push(Check::below(
        "surface.compatibility",
        "max |∂_z̄f_z − ½e^ψf| / (10h²)",
        r.compatibility / r.compatibility_bound,
        1.0,
    ));
    out.push(Check::below("surface.det", "max relative change of det(F)e^{−ψ}", r.det_deviation, 1e-6));
    out.push(Check::below("surface.reality", "max |Im f|", r.max_imag, 1e-8));
    let a = mesh_string(&patch, MeshFormat::Obj)?;
    let again = integrate_embedding(&psi, &u, None, Complex64::new(0.5, 0.5))?;
    let b = mesh_string(&again, MeshFormat::Obj)?;
    out.push(Check::below("surface.obj_deterministic", "OBJ byte mismatch count", if a == b { 0.0 } else { 1.0 }, 0.5));
    Ok(())
}

fn disk_checks(out: &mut Vec<Check>) -> Result<()> {
    let metric_cfg = DiskSweepConfig { lambdas: vec![1e2, 1e3, 1e4, 1e5], ..Default::default() };
    let t = disk_metric_sweep(&metric_cfg)?;
    out.push(Check::below("metric.upper_bound", "max_K ‖U‖²e^{−3ψ} − ½", t.q_max() - 0.5, 1e-8 + f64::EPSILON));
    out.push(Check::within(
        "metric.m_slope",
        "fitted exponent of sup_K|‖U‖²e^{−3ψ} − ½|",
        t.m_slope.unwrap_or(f64::NAN),
        -0.82,
        -0.52,
    ));
    out.push(Check::within("metric.g_slope", "fitted exponent of sup_K|ψ_w|", t.g_slope.unwrap_or(f64::NAN), -0.48, -0.18));

    let reports = disk_segment_sweep(&DiskSweepConfig::default())?;
    let ratios: Vec<f64> = reports.iter().map(|r| r.growth.max_offdiag_ratio).collect();
    let spread = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    out.push(Check::below("growth.spread", "max/min of off-diagonal sup ratios across λ", spread, 2.0));
    let ls: Vec<f64> = reports.iter().map(|r| r.holonomy.lambda).collect();
    let s1 = log_log_slope(&ls, &reports.iter().map(|r| r.dev1).collect::<Vec<_>>()).unwrap_or(f64::NAN);
    let s2 = log_log_slope(&ls, &reports.iter().map(|r| r.dev2).collect::<Vec<_>>()).unwrap_or(f64::NAN);
    out.push(Check::below("charpoly.disk_dev1_slope", "fitted slope of dev1 against λ", s1, -0.18 + f64::EPSILON));
    out.push(Check::below("charpoly.disk_dev2_slope", "fitted slope of dev2 against λ", s2, -0.18 + f64::EPSILON));
    Ok(())
}

/// Run a suite. Numerical failures inside a check propagate as errors; failed
/// bounds are recorded in the report.
pub fn run_all(suite: Suite) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    mu_checks(&mut checks);
    supersolution_checks(&mut checks)?;
    wang_torus_checks(&mut checks)?;
    holonomy_checks(&mut checks)?;
    picard_checks(&mut checks)?;
    path_checks(&mut checks)?;
    surface_checks(&mut checks)?;
    if suite == Suite::Full {
        disk_checks(&mut checks)?;
    }
    Ok(VerifyReport::new(suite, checks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_constructors() {
        assert!(Check::below("a", "", 1.0, 2.0).passed);
        assert!(!Check::below("a", "", f64::NAN, 2.0).passed);
        assert!(Check::within("a", "", -0.6, -0.82, -0.52).passed);
        assert!(!Check::above("a", "", 1e-4, 1e-3).passed);
    }

    #[test]
    fn suite_names() {
        assert_eq!("torus".parse::<Suite>().unwrap(), Suite::Torus);
        assert!("fast".parse::<Suite>().is_err());
    }
}
