//! Reconstruction of the affine sphere `f` from the frame `F = (f, f_z, f_z̄)`
//! and mesh export.
//!
//! Rows of `F` are vectors in ℝ³ (complex for the derivative rows) and satisfy
//! `∂_zF = A_zF`, `∂_z̄F = A_z̄F`. Transport starts at a base node, runs along
//! the base row in `x`, then along every column in `y`.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{fmt_f64, CubicDifferential, Grid2D, ScalarField};
use crate::frame::{path_independence_residual, FrameField, Mat3};

/// Above this path-independence residual the field is rejected.
pub const INTEGRABILITY_TOL: f64 = 1e-4;
/// RK4 substeps per grid edge.
pub const EDGE_SUBSTEPS: usize = 4;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Real frame at a point with conformal factor `psi`:
/// `f = e^{ψ/3}e₁`, `f_z = ½e^{ψ/3}(e₂ − ie₃)`, `f_z̄ = conj(f_z)`, with
/// `(e₁, e₂, e₃)` a right-handed orthonormal basis and `e₁ ∥ (1,1,1)`.
/// Then `det(f, f_z, f_z̄) = (i/2)e^ψ`.
pub fn default_frame(psi: f64) -> Mat3 {
    let s3 = 3f64.sqrt();
    let s2 = 2f64.sqrt();
    let s6 = 6f64.sqrt();
    let e1 = [1.0 / s3, 1.0 / s3, 1.0 / s3];
    let e2 = [1.0 / s2, -1.0 / s2, 0.0];
    let e3 = [1.0 / s6, 1.0 / s6, -2.0 / s6];
    let a = (psi / 3.0).exp();
    let b = 0.5 * a;
    Mat3::from_fn(|row, col| match row {
        0 => c(a * e1[col], 0.0),
        1 => c(b * e2[col], -b * e3[col]),
        _ => c(b * e2[col], b * e3[col]),
    })
}

/// Reality condition: first row real, third row the conjugate of the second.
pub fn is_real_frame(frame: &Mat3, tol: f64) -> bool {
    let scale = frame.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1.0);
    (0..3).all(|j| frame[(0, j)].im.abs() <= tol * scale && (frame[(2, j)] - frame[(1, j)].conj()).norm() <= tol * scale)
}

/// The immersion sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedPatch {
    pub grid: Grid2D,
    pub base: usize,
    /// Frames `(f, f_z, f_z̄)` at every node.
    pub frames: Vec<Mat3>,
    pub psi: Vec<f64>,
    /// `f` (real part of the first frame row).
    pub f: Vec<[f64; 3]>,
    /// `|∂_z̄(f_z) − ½e^ψ f|` at interior nodes, 0 on the boundary.
    pub residual: Vec<f64>,
    pub integrability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchReport {
    pub nodes: usize,
    pub h: f64,
    pub compatibility: f64,
    pub compatibility_bound: f64,
    pub det_deviation: f64,
    pub max_imag: f64,
    pub integrability: f64,
}

impl EmbeddedPatch {
    pub fn compatibility_residual(&self) -> f64 {
        self.residual.iter().cloned().fold(0.0, f64::max)
    }

    /// `max |det(F)e^{−ψ} / (det(F)e^{−ψ})(base) − 1|`.
    pub fn det_deviation(&self) -> f64 {
        let ratio = |k: usize| self.frames[k].determinant() * (-self.psi[k]).exp();
        let r0 = ratio(self.base);
        (0..self.frames.len()).map(|k| (ratio(k) / r0 - c(1.0, 0.0)).norm()).fold(0.0, f64::max)
    }

    pub fn max_imag(&self) -> f64 {
        self.frames.iter().flat_map(|m| (0..3).map(move |j| m[(0, j)].im.abs())).fold(0.0, f64::max)
    }

    /// For constant coefficients `A_z` (torus case): coordinates of `f` in the
    /// eigen-rows of the transport and the largest relative change of their
    /// product `y₁y₂y₃` over the patch.
    pub fn titeica_deviation(&self, a_z: &Mat3) -> Result<f64> {
        // Eigenvectors of [[0,1,0],[0,0,e],[h,0,0]]: (1, a, a²/e), a³ = e·h.
        let e = a_z[(1, 2)];
        let h = a_z[(2, 0)];
        if e.norm() == 0.0 || h.norm() == 0.0 || a_z[(1, 1)].norm() > 1e-12 * e.norm() {
            return Err(Error::invalid("product check needs constant coefficients with ψ_z = 0"));
        }
        let r = (e * h).powf(1.0 / 3.0);
        let roots: Vec<Complex64> =
            (0..3).map(|k| r * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / 3.0)).collect();
        let p = Mat3::from_fn(|i, k| match i {
            0 => c(1.0, 0.0),
            1 => roots[k],
            _ => roots[k] * roots[k] / e,
        });
        let pinv = p.try_inverse().ok_or_else(|| Error::invalid("degenerate eigenbasis"))?;
        // f(z) = Σ_k P_{0k} e^{…} (P⁻¹F₀)_k, so y_k = f·R⁻¹ with R = P⁻¹F₀.
        let r_rows = pinv * self.frames[self.base];
        let rinv = r_rows.try_inverse().ok_or_else(|| Error::invalid("degenerate frame"))?;
        let product = |k: usize| {
            let f = self.frames[k].row(0);
            let y = f * rinv;
            y[0] * y[1] * y[2]
        };
        let p0 = product(self.base);
        Ok((0..self.frames.len()).map(|k| (product(k) / p0 - c(1.0, 0.0)).norm()).fold(0.0, f64::max))
    }

    pub fn report(&self) -> PatchReport {
        let h = self.grid.hx().max(self.grid.hy());
        PatchReport {
            nodes: self.frames.len(),
            h,
            compatibility: self.compatibility_residual(),
            compatibility_bound: 10.0 * h * h,
            det_deviation: self.det_deviation(),
            max_imag: self.max_imag(),
            integrability: self.integrability,
        }
    }
}

fn transport_edge(field: &FrameField, from: Complex64, to: Complex64, frame: Mat3) -> Result<Mat3> {
    let d = to - from;
    let h = 1.0 / EDGE_SUBSTEPS as f64;
    let k = |s: f64| -> Result<Mat3> {
        let m = field.chart_matrices(from + d * s)?;
        Ok(m.a_z * d + m.a_zbar * d.conj())
    };
    let mut f = frame;
    for i in 0..EDGE_SUBSTEPS {
        let s = i as f64 * h;
        let km = k(s + 0.5 * h)?;
        let k1 = k(s)? * f;
        let k2 = km * (f + k1 * c(0.5 * h, 0.0));
        let k3 = km * (f + k2 * c(0.5 * h, 0.0));
        let k4 = k(s + h)? * (f + k3 * c(h, 0.0));
        f += (k1 + k2 * c(2.0, 0.0) + k3 * c(2.0, 0.0) + k4) * c(h / 6.0, 0.0);
    }
    Ok(f)
}

/// Integrate the frame over all nodes of `psi.grid` starting from `initial` at
/// the node nearest `base`. `initial = None` uses [`default_frame`].
pub fn integrate_embedding(
    psi: &ScalarField,
    u: &CubicDifferential,
    initial: Option<Mat3>,
    base: Complex64,
) -> Result<EmbeddedPatch> {
    let g = psi.grid;
    g.validate()?;
    if psi.values.is_empty() {
        return Err(Error::EmptyPatch);
    }
    let fx = ((base.re - g.x0) / g.hx()).round();
    let fy = ((base.im - g.y0) / g.hy()).round();
    if !(0.0..g.nx as f64).contains(&fx) || !(0.0..g.ny as f64).contains(&fy) {
        return Err(Error::OutOfDomain { z: base });
    }
    let (bx, by) = (fx as usize, fy as usize);
    let b = g.index(bx, by);
    let initial = initial.unwrap_or_else(|| default_frame(psi.values[b]));
    if !is_real_frame(&initial, 1e-12) {
        return Err(Error::invalid("initial frame violates the reality condition"));
    }

    let node = |ix: usize, iy: usize| g.node(ix, iy);
    let corner = node(if bx * 2 < g.nx { g.nx - 1 } else { 0 }, if by * 2 < g.ny { g.ny - 1 } else { 0 });
    let z0 = node(bx, by);
    let integrability = if (corner.re - z0.re).abs() > 0.0 && (corner.im - z0.im).abs() > 0.0 {
        let p1 = [z0, c(corner.re, z0.im), corner];
        let p2 = [z0, c(z0.re, corner.im), corner];
        let spu = ((8.0 / g.hx().min(g.hy())).ceil() as usize).max(64);
        path_independence_residual(psi, u, &p1, &p2, spu)?
    } else {
        0.0
    };
    if integrability > INTEGRABILITY_TOL {
        return Err(Error::NonIntegrable { residual: integrability });
    }

    let field = FrameField::new(psi, u);
    let mut frames = vec![Mat3::zeros(); g.len()];
    frames[b] = initial;
    for ix in (bx + 1)..g.nx {
        frames[g.index(ix, by)] = transport_edge(&field, node(ix - 1, by), node(ix, by), frames[g.index(ix - 1, by)])?;
    }
    for ix in (0..bx).rev() {
        frames[g.index(ix, by)] = transport_edge(&field, node(ix + 1, by), node(ix, by), frames[g.index(ix + 1, by)])?;
    }
    for ix in 0..g.nx {
        for iy in (by + 1)..g.ny {
            frames[g.index(ix, iy)] = transport_edge(&field, node(ix, iy - 1), node(ix, iy), frames[g.index(ix, iy - 1)])?;
        }
        for iy in (0..by).rev() {
            frames[g.index(ix, iy)] = transport_edge(&field, node(ix, iy + 1), node(ix, iy), frames[g.index(ix, iy + 1)])?;
        }
    }

    let f: Vec<[f64; 3]> = frames.iter().map(|m| [m[(0, 0)].re, m[(0, 1)].re, m[(0, 2)].re]).collect();
    if f.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("immersion overflowed"));
    }
    // ∂_z̄ = ½(∂_x + i∂_y) on the f_z row, central differences.
    let mut residual = vec![0.0; g.len()];
    for iy in 1..g.ny.saturating_sub(1) {
        for ix in 1..g.nx.saturating_sub(1) {
            let k = g.index(ix, iy);
            let row = |i: usize| frames[i].row(1).into_owned();
            let dx = (row(g.index(ix + 1, iy)) - row(g.index(ix - 1, iy))) / c(2.0 * g.hx(), 0.0);
            let dy = (row(g.index(ix, iy + 1)) - row(g.index(ix, iy - 1))) / c(2.0 * g.hy(), 0.0);
            let dzbar = (dx + dy * c(0.0, 1.0)) * c(0.5, 0.0);
            let want = frames[k].row(0) * c(0.5 * psi.values[k].exp(), 0.0);
            residual[k] = (dzbar - want).norm();
        }
    }
    Ok(EmbeddedPatch { grid: g, base: b, frames, psi: psi.values.clone(), f, residual, integrability })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Obj,
    Csv,
}

/// Mesh text: OBJ vertices in row-major node order and two triangles per cell,
/// or CSV `x,y,z` per node.
pub fn mesh_string(patch: &EmbeddedPatch, format: MeshFormat) -> Result<String> {
    if patch.f.is_empty() || patch.f.len() != patch.grid.len() {
        return Err(Error::EmptyPatch);
    }
    let mut s = String::new();
    match format {
        MeshFormat::Obj => {
            for p in &patch.f {
                let _ = writeln!(s, "v {} {} {}", fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(p[2]));
            }
            let g = &patch.grid;
            for iy in 0..g.ny - 1 {
                for ix in 0..g.nx - 1 {
                    let v00 = g.index(ix, iy) + 1;
                    let v10 = g.index(ix + 1, iy) + 1;
                    let v01 = g.index(ix, iy + 1) + 1;
                    let v11 = g.index(ix + 1, iy + 1) + 1;
                    let _ = writeln!(s, "f {v00} {v10} {v11}");
                    let _ = writeln!(s, "f {v00} {v11} {v01}");
                }
            }
        }
        MeshFormat::Csv => {
            s.push_str("x,y,z\n");
            for p in &patch.f {
                let _ = writeln!(s, "{},{},{}", fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(p[2]));
            }
        }
    }
    Ok(s)
}

pub fn export_mesh(patch: &EmbeddedPatch, format: MeshFormat, path: &Path) -> Result<()> {
    let s = mesh_string(patch, format)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(s.as_bytes())?;
    Ok(())
}
