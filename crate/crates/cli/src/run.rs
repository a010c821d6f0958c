//! Mode dispatch. Every mode returns its artifacts as strings; `write` is the
//! only place that touches the filesystem.

use std::path::Path;

use holonomy_core::asymptotics::{segment_intervals, segment_report, sweep_to_csv};
use holonomy_core::field::fmt_f64;
use holonomy_core::frame::{default_steps, holonomy, FrameField, HolonomyResult};
use holonomy_core::surface::{integrate_embedding, mesh_string, MeshFormat, PatchReport};
use holonomy_core::verify::run_all;
use holonomy_core::wang::{verify_metric_asymptotics, SolveReport};
use holonomy_core::{
    mu_roots, BoundaryCondition, Complex64, CubicDifferential, Error, GeodesicSegment, Grid2D, Region, ScalarField, WangProblem,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, GridSpec, MeshKind, Mode};

#[derive(Debug, Default)]
pub struct Output {
    /// Printed when no output directory is given.
    pub stdout: String,
    pub files: Vec<(String, String)>,
    /// Set by verify-all when a check fails.
    pub failed_checks: Vec<String>,
}

impl Output {
    fn file(&mut self, name: &str, body: String) {
        self.files.push((name.to_string(), body));
    }

    /// Writes every artifact under `dir`, or returns the stdout text.
    pub fn write(&self, dir: Option<&Path>) -> std::io::Result<String> {
        let Some(dir) = dir else {
            return Ok(self.stdout.clone());
        };
        std::fs::create_dir_all(dir)?;
        let mut listing = String::new();
        for (name, body) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            listing.push_str(&format!("{}\n", path.display()));
        }
        Ok(listing)
    }
}

fn json<T: Serialize + ?Sized>(v: &T) -> Result<String, Error> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn problem(cfg: &ExperimentConfig, lambda: f64) -> Result<WangProblem, Error> {
    let u = CubicDifferential::new(cfg.u0.clone(), lambda)?;
    match cfg.grid {
        GridSpec::Torus { n, side } => WangProblem::torus(u, Grid2D::torus((0.0, side), (0.0, side), n, n)?),
        GridSpec::Disk { n, radius } => {
            let grid = Grid2D::rectangle((-radius, radius), (-radius, radius), n, n)?;
            let domain = Region::Disk { center: Complex64::new(0.0, 0.0), radius };
            WangProblem::dirichlet(u, grid, Some(domain), BoundaryCondition::Subsolution)
        }
        GridSpec::Rectangle { x, y, n } => {
            let grid = Grid2D::rectangle((x[0], x[1]), (y[0], y[1]), n, n)?;
            WangProblem::dirichlet(u, grid, cfg.domain, BoundaryCondition::Subsolution)
        }
    }
}

#[derive(Serialize)]
struct SolveSummary {
    lambda: f64,
    sup: f64,
    psi_min: f64,
    psi_max: f64,
    report: SolveReport,
}

fn solve(cfg: &ExperimentConfig, lambda: f64) -> Result<(WangProblem, ScalarField, SolveSummary), Error> {
    let p = problem(cfg, lambda)?;
    let sup = p.barriers(0.0)?.sup;
    let (psi, report) = p.solve_from_supersolution(cfg.tolerances.newton * sup.exp().max(1.0))?;
    let active = p.active_mask()?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (v, a) in psi.values.iter().zip(&active) {
        if *a {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    Ok((p, psi, SolveSummary { lambda, sup, psi_min: lo, psi_max: hi, report }))
}

fn segments(cfg: &ExperimentConfig) -> Result<Vec<GeodesicSegment>, Error> {
    let mut out = Vec::new();
    for &theta in &cfg.thetas {
        for &length in &cfg.lengths {
            out.push(GeodesicSegment::new(cfg.start, length, theta, cfg.tolerances.clearance)?);
        }
    }
    Ok(out)
}

pub fn run(cfg: &ExperimentConfig, mode: Mode) -> Result<Output, Error> {
    let mut out = Output::default();
    match mode {
        Mode::MuRoots => {
            let mut csv = String::from("theta,mu1,mu2,mu3\n");
            for &theta in &cfg.thetas {
                let [a, b, c] = mu_roots(theta).as_array();
                out.stdout.push_str(&format!("{a} {b} {c}\n"));
                csv.push_str(&format!("{},{},{},{}\n", fmt_f64(theta), fmt_f64(a), fmt_f64(b), fmt_f64(c)));
            }
            out.file("mu_roots.csv", csv);
        }
        Mode::Solve => {
            let solved: Result<Vec<_>, Error> = cfg.lambdas.par_iter().map(|&l| solve(cfg, l)).collect();
            let mut summaries = Vec::new();
            for (k, (_, psi, s)) in solved?.into_iter().enumerate() {
                out.file(&format!("psi_{k}.csv"), psi.to_csv());
                summaries.push(s);
            }
            out.stdout = json(&summaries)?;
            out.file("solve.json", out.stdout.clone());
        }
        Mode::Transport => {
            let segs = segments(cfg)?;
            let per_lambda: Result<Vec<Vec<HolonomyResult>>, Error> = cfg
                .lambdas
                .par_iter()
                .map(|&l| {
                    let (p, psi, _) = solve(cfg, l)?;
                    segs.iter()
                        .map(|s| holonomy(&psi, &p.u, s, cfg.tolerances.steps.unwrap_or_else(|| default_steps(l, s.length))))
                        .collect()
                })
                .collect();
            let all: Vec<HolonomyResult> = per_lambda?.into_iter().flatten().collect();
            out.stdout = json(&all)?;
            out.file("transport.json", out.stdout.clone());
        }
        Mode::Sweep => {
            let segs = segments(cfg)?;
            let per_lambda: Result<Vec<Vec<_>>, Error> = cfg
                .lambdas
                .par_iter()
                .map(|&l| {
                    let (p, psi, _) = solve(cfg, l)?;
                    let field = FrameField::new(&psi, &p.u);
                    segs.par_iter()
                        .map(|s| {
                            let m = cfg.tolerances.picard_intervals.unwrap_or_else(|| segment_intervals(l, s.length));
                            segment_report(&field, s, m)
                        })
                        .collect()
                })
                .collect();
            let reports: Vec<_> = per_lambda?.into_iter().flatten().collect();
            let rows: Vec<_> = reports.iter().map(|r| r.sweep_row()).collect();
            out.stdout = sweep_to_csv(&rows);
            out.file("sweep.csv", out.stdout.clone());
            out.file("sweep.json", json(&reports)?);
        }
        Mode::Prop4 => {
            let template = problem(cfg, cfg.lambdas[0])?;
            let table = verify_metric_asymptotics(&template, &cfg.compact, &cfg.lambdas, cfg.tolerances.newton)?;
            out.stdout = table.to_csv();
            out.file("metric.csv", out.stdout.clone());
            out.file("prop4.json", json(&table)?);
        }
        Mode::Surface => {
            let (p, psi, _) = solve(cfg, cfg.lambdas[0])?;
            let patch = integrate_embedding(&psi, &p.u, None, cfg.start)?;
            let (format, name) = match cfg.outputs.mesh {
                MeshKind::Obj => (MeshFormat::Obj, "surface.obj"),
                MeshKind::Csv => (MeshFormat::Csv, "surface.csv"),
            };
            out.stdout = mesh_string(&patch, format)?;
            out.file(name, out.stdout.clone());
            let report: PatchReport = patch.report();
            out.file("surface.json", json(&report)?);
        }
        Mode::VerifyAll => {
            let report = run_all(cfg.suite)?;
            out.failed_checks = report.checks.iter().filter(|c| !c.passed).map(|c| c.id.clone()).collect();
            out.stdout = report.to_json()?;
            if !out.stdout.ends_with('\n') {
                out.stdout.push('\n');
            }
            out.file("verify.json", out.stdout.clone());
        }
    }
    Ok(out)
}
