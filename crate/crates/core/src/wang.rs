//! Wang's equation `Δψ + 4|U|²e^{−2ψ} − 2e^ψ − 2κ = 0` on flat tori and planar
//! Dirichlet domains, its barriers, and the metric-asymptotics sweep.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cubic::{supersolution_root, SupersolutionRoot};
use crate::error::{Error, Result};
use crate::field::{fmt_f64, CubicDifferential, Grid2D, Region, ScalarField};
use crate::stencil::{Laplacian, StencilKind};

/// Value used for `s` at zeros of `U₀`, where `log|U₀| = −∞`.
pub const SUBSOLUTION_CLAMP: f64 = -1e3;
pub const MAX_NEWTON_ITERATIONS: usize = 60;
const CG_RTOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum BoundaryCondition {
    Periodic,
    /// Dirichlet data equal to the subsolution `s`.
    Subsolution,
    /// Dirichlet data read from the inactive nodes of this field.
    Dirichlet(ScalarField),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WangProblem {
    pub u: CubicDifferential,
    pub grid: Grid2D,
    pub boundary: BoundaryCondition,
    /// Dirichlet domain; nodes inside it (and off the grid edge) are unknowns.
    /// `None` means the open rectangle of the grid.
    pub domain: Option<Region>,
    /// Background curvature; `None` is the flat background.
    pub kappa: Option<ScalarField>,
    pub stencil: StencilKind,
}

/// Sub- and supersolution bracketing the solution.
#[derive(Clone, Debug, PartialEq)]
pub struct Barrier {
    /// `e^s = 2^{1/3}|λU₀|^{2/3}`, clamped at [`SUBSOLUTION_CLAMP`].
    pub sub: ScalarField,
    /// Constant `S = log r`.
    pub sup: f64,
    pub sigma: f64,
    pub root: SupersolutionRoot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    /// Newton from a supersolution with the comparison-preserving correction.
    pub monotone: bool,
    /// Largest positive Newton increment discarded in monotone mode.
    pub max_increase: f64,
    pub corrected_steps: usize,
}

struct Discrete {
    lap: Laplacian,
    active: Vec<bool>,
    u2: Vec<f64>,
    kappa: Vec<f64>,
    fixed: Vec<f64>,
}

impl WangProblem {
    /// Doubly periodic problem; `U₀` must be constant.
    pub fn torus(u: CubicDifferential, grid: Grid2D) -> Result<Self> {
        let p =
            Self { u, grid, boundary: BoundaryCondition::Periodic, domain: None, kappa: None, stencil: StencilKind::default() };
        p.validate()?;
        Ok(p)
    }

    pub fn dirichlet(u: CubicDifferential, grid: Grid2D, domain: Option<Region>, boundary: BoundaryCondition) -> Result<Self> {
        let p = Self { u, grid, boundary, domain, kappa: None, stencil: StencilKind::default() };
        p.validate()?;
        Ok(p)
    }

    /// `U₀ = 2z` on the disk `|z| < radius`, gridded on `[−radius, radius]²` with
    /// `n×n` nodes and subsolution boundary data.
    pub fn disk_model(lambda: f64, n: usize, radius: f64) -> Result<Self> {
        let u = CubicDifferential::from_real(&[0.0, 2.0], lambda)?;
        let grid = Grid2D::rectangle((-radius, radius), (-radius, radius), n, n)?;
        let domain = Region::Disk { center: Complex64::new(0.0, 0.0), radius };
        Self::dirichlet(u, grid, Some(domain), BoundaryCondition::Subsolution)
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        let mut p = self.clone();
        p.u = self.u.with_lambda(lambda)?;
        Ok(p)
    }

    pub fn with_stencil(mut self, stencil: StencilKind) -> Self {
        self.stencil = stencil;
        self
    }

    pub fn with_kappa(mut self, kappa: ScalarField) -> Result<Self> {
        self.kappa = Some(kappa);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        match &self.boundary {
            BoundaryCondition::Periodic => {
                if !self.grid.is_periodic() {
                    return Err(Error::invalid("periodic problem needs a doubly periodic grid"));
                }
                if !self.u.is_constant() {
                    return Err(Error::invalid("periodic problem needs constant U₀"));
                }
            }
            BoundaryCondition::Subsolution => {}
            BoundaryCondition::Dirichlet(data) => {
                if data.grid != self.grid {
                    return Err(Error::GridMismatch("boundary data grid differs from problem grid".into()));
                }
            }
        }
        if let Some(k) = &self.kappa {
            if k.grid != self.grid {
                return Err(Error::GridMismatch("kappa grid differs from problem grid".into()));
            }
        }
        Ok(())
    }

    /// Unknown nodes.
    pub fn active_mask(&self) -> Result<Vec<bool>> {
        let lap = Laplacian::new(self.grid, self.stencil)?;
        Ok(self.mask_with(&lap))
    }

    fn mask_with(&self, lap: &Laplacian) -> Vec<bool> {
        let periodic = matches!(self.boundary, BoundaryCondition::Periodic);
        self.grid
            .nodes()
            .map(|(ix, iy, z)| {
                let i = self.grid.index(ix, iy);
                periodic || (lap.has_full_stencil(i) && self.domain.is_none_or(|d| d.contains(z)))
            })
            .collect()
    }

    fn discretize(&self) -> Result<Discrete> {
        self.validate()?;
        let lap = Laplacian::new(self.grid, self.stencil)?;
        let active = self.mask_with(&lap);
        let u2: Vec<f64> = self.grid.nodes().map(|(_, _, z)| self.u.eval(z).norm_sqr()).collect();
        let kappa = self.kappa.as_ref().map_or_else(|| vec![0.0; self.grid.len()], |k| k.values.clone());
        let fixed = match &self.boundary {
            BoundaryCondition::Periodic => vec![0.0; self.grid.len()],
            BoundaryCondition::Subsolution => self.subsolution().values,
            BoundaryCondition::Dirichlet(data) => data.values.clone(),
        };
        Ok(Discrete { lap, active, u2, kappa, fixed })
    }

    /// `s` with `e^s = 2^{1/3}|λU₀|^{2/3}`, clamped near zeros.
    pub fn subsolution(&self) -> ScalarField {
        ScalarField::from_fn(self.grid, |z| subsolution_value(&self.u, z))
    }

    /// Residual `Δψ + 4|U|²e^{−2ψ} − 2e^ψ − 2κ` at unknown nodes, 0 elsewhere.
    pub fn residual(&self, psi: &ScalarField) -> Result<ScalarField> {
        if psi.grid != self.grid {
            return Err(Error::GridMismatch("ψ lives on a different grid".into()));
        }
        let d = self.discretize()?;
        let mut values = vec![0.0; self.grid.len()];
        fill_residual(&d, &psi.values, &mut values);
        Ok(ScalarField { grid: self.grid, values })
    }

    /// Sub/supersolution pair. `σ ≥ max(−κ)`; 0 on a flat background.
    pub fn barriers(&self, sigma: f64) -> Result<Barrier> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be finite and ≥ 0, got {sigma}")));
        }
        let d = self.discretize()?;
        if let Some(k) = &self.kappa {
            let need = k.values.iter().map(|v| -v).fold(0.0, f64::max);
            if sigma < need {
                return Err(Error::invalid(format!("sigma {sigma} < max(−κ) = {need}")));
            }
        }
        // sup |U₀|² over the unknowns and every node their stencils reach.
        let mut reach = d.active.clone();
        for i in 0..d.active.len() {
            if d.active[i] {
                for j in d.lap.neighbours(i) {
                    reach[j] = true;
                }
            }
        }
        let lambda = self.u.lambda();
        let sup_u0_2 = d.u2.iter().zip(&reach).filter(|(_, r)| **r).map(|(v, _)| v / (lambda * lambda)).fold(0.0, f64::max);
        if sup_u0_2 == 0.0 {
            return Err(Error::invalid("U₀ vanishes on the whole domain"));
        }
        let lambda_eff = lambda * (2.0 * sup_u0_2).sqrt();
        let root = supersolution_root(sigma, lambda_eff)?;
        let sub = self.subsolution();
        let sup = root.log_r();
        let worst = sub.values.iter().zip(&reach).filter(|(_, r)| **r).map(|(v, _)| *v).fold(f64::MIN, f64::max);
        if worst > sup + 1e-12 * sup.abs().max(1.0) {
            return Err(Error::invalid(format!("barrier order violated: max s = {worst} > S = {sup}")));
        }
        Ok(Barrier { sub, sup, sigma, root })
    }

    pub fn solve(&self, initial: &ScalarField, tol: f64) -> Result<ScalarField> {
        self.solve_with_report(initial, tol).map(|(psi, _)| psi)
    }

    /// Newton iteration to `max|F(ψ)| < tol`.
    ///
    /// From a supersolution (`F ≤ 0`) every step solves
    /// `(−J + diag(c))δ = F` with `c = ½·max(N''(ψ+δ₀), 0)·|δ₀|`, `δ₀` the plain
    /// Newton step. The convex part of `N` then cannot push `ψ+δ` below the
    /// solution, so the iterates decrease monotonically. Any other start uses
    /// damped Newton with step halving on the max-norm residual.
    pub fn solve_with_report(&self, initial: &ScalarField, tol: f64) -> Result<(ScalarField, SolveReport)> {
        self.solve_observed(initial, tol, |_| {})
    }

    /// [`Self::solve_with_report`], calling `observe` with every accepted iterate.
    pub fn solve_observed(
        &self,
        initial: &ScalarField,
        tol: f64,
        mut observe: impl FnMut(&[f64]),
    ) -> Result<(ScalarField, SolveReport)> {
        if !(tol > 0.0) {
            return Err(Error::invalid("tol must be > 0"));
        }
        if initial.grid != self.grid {
            return Err(Error::GridMismatch("initial field lives on a different grid".into()));
        }
        let d = self.discretize()?;
        let n = self.grid.len();
        let mut psi: Vec<f64> = (0..n).map(|i| if d.active[i] { initial.values[i] } else { d.fixed[i] }).collect();
        let mut f = vec![0.0; n];
        fill_residual(&d, &psi, &mut f);
        let monotone = max_active(&d, &f, |v| v) <= 0.0;
        let mut report = SolveReport {
            iterations: 0,
            final_residual: max_active(&d, &f, f64::abs),
            monotone,
            max_increase: 0.0,
            corrected_steps: 0,
        };

        let mut diag = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut ft = vec![0.0; n];
        while report.final_residual >= tol {
            if report.iterations == MAX_NEWTON_ITERATIONS {
                return Err(Error::NonConvergence { iterations: report.iterations, residual: report.final_residual });
            }
            report.iterations += 1;
            for i in 0..n {
                diag[i] = 8.0 * d.u2[i] * (-2.0 * psi[i]).exp() + 2.0 * psi[i].exp();
            }
            let mut delta = d.lap.solve_shifted(&d.active, &diag, &f, CG_RTOL)?.x;
            if monotone {
                clamp_increase(&mut delta, &mut report);
                axpy(&psi, 1.0, &delta, &mut trial);
                fill_residual(&d, &trial, &mut ft);
                if max_active(&d, &ft, |v| v) > 0.5 * tol {
                    report.corrected_steps += 1;
                    let mut shifted = diag.clone();
                    for i in 0..n {
                        let npp = 16.0 * d.u2[i] * (-2.0 * trial[i]).exp() - 2.0 * trial[i].exp();
                        shifted[i] += 0.5 * npp.max(0.0) * delta[i].abs();
                    }
                    delta = d.lap.solve_shifted(&d.active, &shifted, &f, CG_RTOL)?.x;
                    clamp_increase(&mut delta, &mut report);
                    axpy(&psi, 1.0, &delta, &mut trial);
                    fill_residual(&d, &trial, &mut ft);
                }
            } else {
                let mut t = 1.0;
                loop {
                    axpy(&psi, t, &delta, &mut trial);
                    fill_residual(&d, &trial, &mut ft);
                    let r = max_active(&d, &ft, f64::abs);
                    if r < report.final_residual {
                        break;
                    }
                    t *= 0.5;
                    if t < 1e-6 {
                        return Err(Error::NonConvergence { iterations: report.iterations, residual: report.final_residual });
                    }
                }
            }
            std::mem::swap(&mut psi, &mut trial);
            std::mem::swap(&mut f, &mut ft);
            observe(&psi);
            report.final_residual = max_active(&d, &f, f64::abs);
        }
        Ok((ScalarField { grid: self.grid, values: psi }, report))
    }

    /// Solve from the supersolution constant `S` (σ = 0, or `max(−κ)`).
    pub fn solve_from_supersolution(&self, tol: f64) -> Result<(ScalarField, SolveReport)> {
        let sigma = self.kappa.as_ref().map_or(0.0, |k| k.values.iter().map(|v| -v).fold(0.0, f64::max));
        let b = self.barriers(sigma)?;
        self.solve_with_report(&ScalarField::constant(self.grid, b.sup), tol)
    }
}

pub fn subsolution_value(u: &CubicDifferential, z: Complex64) -> f64 {
    let a = u.eval(z).norm();
    if a == 0.0 {
        return SUBSOLUTION_CLAMP;
    }
    (std::f64::consts::LN_2 / 3.0 + (2.0 / 3.0) * a.ln()).max(SUBSOLUTION_CLAMP)
}

fn fill_residual(d: &Discrete, psi: &[f64], out: &mut [f64]) {
    for i in 0..psi.len() {
        out[i] = if d.active[i] {
            let p = psi[i];
            d.lap.apply_at(psi, i) + 4.0 * d.u2[i] * (-2.0 * p).exp() - 2.0 * p.exp() - 2.0 * d.kappa[i]
        } else {
            0.0
        };
    }
}

fn max_active(d: &Discrete, v: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    v.iter().zip(&d.active).filter(|(_, a)| **a).map(|(x, _)| f(*x)).fold(f64::NEG_INFINITY, f64::max)
}

fn axpy(x: &[f64], t: f64, d: &[f64], out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] = x[i] + t * d[i];
    }
}

fn clamp_increase(delta: &mut [f64], report: &mut SolveReport) {
    for v in delta.iter_mut() {
        if *v > 0.0 {
            report.max_increase = report.max_increase.max(*v);
            *v = 0.0;
        }
    }
}

/// One row of the metric-asymptotics sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub lambda: f64,
    pub grid: Grid2D,
    pub iterations: usize,
    pub final_residual: f64,
    /// `sup_K |‖U‖²e^{−3ψ} − ½|`.
    pub m_sup: f64,
    /// `sup_K |∂_w ψ|` in the flat chart of `U₀`.
    pub g_sup: f64,
    /// `max_K ‖U‖²e^{−3ψ}`.
    pub q_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
    /// Least-squares slope of `log m` against `log λ`; `None` when some `m` is 0.
    pub m_slope: Option<f64>,
    pub g_slope: Option<f64>,
}

impl MetricTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,m,g\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", fmt_f64(r.lambda), fmt_f64(r.m_sup), fmt_f64(r.g_sup)));
        }
        s
    }

    pub fn q_max(&self) -> f64 {
        self.rows.iter().map(|r| r.q_max).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Least-squares slope of `log y` against `log x`; `None` if any `y ≤ 0`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() || y.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// `m`, `g` and `max q` of a solved field over the nodes of `k`.
pub fn metric_sups(problem: &WangProblem, psi: &ScalarField, k: &Region) -> Result<(f64, f64, f64)> {
    let u = &problem.u;
    for r in u.zeros() {
        if k.contains(r) {
            return Err(Error::SingularPoint { z: r, detail: "K contains a zero of U₀".into() });
        }
    }
    let active = problem.active_mask()?;
    let s = problem.subsolution();
    let v = ScalarField { grid: psi.grid, values: psi.values.iter().zip(&s.values).map(|(a, b)| a - b).collect() };
    let grad = v.gradient();
    let (mut m, mut g, mut q) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    let mut any = false;
    for (ix, iy, z) in psi.grid.nodes() {
        if !k.contains(z) {
            continue;
        }
        let i = psi.grid.index(ix, iy);
        if !active[i] {
            return Err(Error::invalid("K must lie inside the solved domain"));
        }
        any = true;
        let qi = u.eval(z).norm_sqr() * (-3.0 * psi.values[i]).exp();
        m = m.max((qi - 0.5).abs());
        q = q.max(qi);
        let vz = Complex64::new(0.5 * grad.dx.values[i], -0.5 * grad.dy.values[i]);
        g = g.max(vz.norm() * (u.eval_u0(z) / 2.0).norm().powf(-1.0 / 3.0));
    }
    if !any {
        return Err(Error::invalid("K contains no grid nodes"));
    }
    Ok((m, g, q))
}

/// Solve `template` for every λ (in parallel, each solve sequential) from the
/// supersolution and measure `m` and `g` on `k`. The Newton tolerance is
/// `rel_tol · max(1, e^S)`.
pub fn verify_metric_asymptotics(template: &WangProblem, k: &Region, lambdas: &[f64], rel_tol: f64) -> Result<MetricTable> {
    let rows: Result<Vec<MetricRow>> = lambdas
        .par_iter()
        .map(|&lambda| {
            let p = template.with_lambda(lambda)?;
            let b = p.barriers(0.0)?;
            let tol = rel_tol * b.sup.exp().max(1.0);
            let (psi, rep) = p.solve_with_report(&ScalarField::constant(p.grid, b.sup), tol)?;
            let (m, g, q) = metric_sups(&p, &psi, k)?;
            Ok(MetricRow {
                lambda,
                grid: p.grid,
                iterations: rep.iterations,
                final_residual: rep.final_residual,
                m_sup: m,
                g_sup: g,
                q_max: q,
            })
        })
        .collect();
    let rows = rows?;
    let ls: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    let m_slope = log_log_slope(&ls, &rows.iter().map(|r| r.m_sup).collect::<Vec<_>>());
    let g_slope = log_log_slope(&ls, &rows.iter().map(|r| r.g_sup).collect::<Vec<_>>());
    Ok(MetricTable { rows, m_slope, g_slope })
}
