//! Discrete Laplacians on [`Grid2D`] and a Jacobi-preconditioned conjugate
//! gradient solver for `(−L + diag(d)) x = b` restricted to an active node set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Grid2D;

/// Which discrete Laplacian to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StencilKind {
    FivePoint,
    /// `Dxx + Dyy + (hx²+hy²)/12 · DxxDyy`. Leading error `(h²/12)Δ²u` for
    /// `hx = hy`, so it is high order on harmonic functions.
    #[default]
    NinePoint,
}

const NONE: u32 = u32::MAX;

/// Neighbour order: E, W, N, S, NE, NW, SE, SW.
#[derive(Clone, Debug)]
pub struct Laplacian {
    pub kind: StencilKind,
    pub grid: Grid2D,
    center: f64,
    wx: f64,
    wy: f64,
    corner: f64,
    nbr: Vec<[u32; 8]>,
}

impl Laplacian {
    pub fn new(grid: Grid2D, kind: StencilKind) -> Result<Self> {
        grid.validate()?;
        let (hx2, hy2) = (grid.hx().powi(2), grid.hy().powi(2));
        let (center, wx, wy, corner) = match kind {
            StencilKind::FivePoint => (-2.0 / hx2 - 2.0 / hy2, 1.0 / hx2, 1.0 / hy2, 0.0),
            StencilKind::NinePoint => {
                if hx2 > 5.0 * hy2 || hy2 > 5.0 * hx2 {
                    return Err(Error::invalid("nine-point stencil needs aspect ratio hx/hy within [1/√5, √5]"));
                }
                let a = (hx2 + hy2) / 12.0 / (hx2 * hy2);
                (-2.0 / hx2 - 2.0 / hy2 + 4.0 * a, 1.0 / hx2 - 2.0 * a, 1.0 / hy2 - 2.0 * a, a)
            }
        };
        let (nx, ny) = (grid.nx as i64, grid.ny as i64);
        let wrap = |i: i64, n: i64, periodic: bool| -> Option<i64> {
            if periodic {
                Some(i.rem_euclid(n))
            } else if (0..n).contains(&i) {
                Some(i)
            } else {
                None
            }
        };
        let offsets = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, 1), (1, -1), (-1, -1)];
        let mut nbr = Vec::with_capacity(grid.len());
        for iy in 0..ny {
            for ix in 0..nx {
                let mut row = [NONE; 8];
                for (k, (dx, dy)) in offsets.iter().enumerate() {
                    if let (Some(jx), Some(jy)) = (wrap(ix + dx, nx, grid.periodic_x), wrap(iy + dy, ny, grid.periodic_y)) {
                        row[k] = (jy * nx + jx) as u32;
                    }
                }
                nbr.push(row);
            }
        }
        Ok(Self { kind, grid, center, wx, wy, corner, nbr })
    }

    /// Central weight (negative).
    pub fn center_weight(&self) -> f64 {
        self.center
    }

    /// True when every stencil neighbour of node `i` exists.
    pub fn has_full_stencil(&self, i: usize) -> bool {
        let need = if self.kind == StencilKind::NinePoint { 8 } else { 4 };
        self.nbr[i][..need].iter().all(|j| *j != NONE)
    }

    pub fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let need = if self.kind == StencilKind::NinePoint { 8 } else { 4 };
        self.nbr[i][..need].iter().filter(|j| **j != NONE).map(|j| *j as usize)
    }

    /// `(Lu)_i`. Node `i` must have a full stencil.
    #[inline]
    pub fn apply_at(&self, u: &[f64], i: usize) -> f64 {
        let n = &self.nbr[i];
        let g = |k: usize| u[n[k] as usize];
        let mut s = self.center * u[i] + self.wx * (g(0) + g(1)) + self.wy * (g(2) + g(3));
        if self.corner != 0.0 {
            s += self.corner * (g(4) + g(5) + g(6) + g(7));
        }
        s
    }

    /// `y = (−L + diag(d)) x` on active nodes; inactive entries of `x` are treated as 0.
    fn apply_operator(&self, active: &[bool], d: &[f64], x: &[f64], y: &mut [f64]) {
        let n = &self.nbr;
        let val = |j: u32| if j != NONE && active[j as usize] { x[j as usize] } else { 0.0 };
        for i in 0..x.len() {
            if !active[i] {
                y[i] = 0.0;
                continue;
            }
            let r = &n[i];
            let mut s = self.center * x[i] + self.wx * (val(r[0]) + val(r[1])) + self.wy * (val(r[2]) + val(r[3]));
            if self.corner != 0.0 {
                s += self.corner * (val(r[4]) + val(r[5]) + val(r[6]) + val(r[7]));
            }
            y[i] = d[i] * x[i] - s;
        }
    }

    /// Solve `(−L + diag(d)) x = b` on the active nodes with `d > 0` by
    /// Jacobi-preconditioned CG to relative tolerance `rtol`.
    pub fn solve_shifted(&self, active: &[bool], d: &[f64], b: &[f64], rtol: f64) -> Result<CgReport> {
        let len = self.grid.len();
        if active.len() != len || d.len() != len || b.len() != len {
            return Err(Error::GridMismatch("linear system size does not match grid".into()));
        }
        let dot = |a: &[f64], c: &[f64]| -> f64 { a.iter().zip(c).map(|(x, y)| x * y).sum() };
        let inv_diag: Vec<f64> = (0..len).map(|i| if active[i] { 1.0 / (d[i] - self.center) } else { 0.0 }).collect();
        if inv_diag.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::LinearSolve("non-positive diagonal".into()));
        }
        let mut x = vec![0.0; len];
        let mut r: Vec<f64> = (0..len).map(|i| if active[i] { b[i] } else { 0.0 }).collect();
        let bnorm = dot(&r, &r).sqrt();
        if bnorm == 0.0 {
            return Ok(CgReport { x, iterations: 0, relative_residual: 0.0 });
        }
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, m)| a * m).collect();
        let mut p = z.clone();
        let mut q = vec![0.0; len];
        let mut rz = dot(&r, &z);
        let max_iter = 20 * len.max(100);
        for it in 1..=max_iter {
            self.apply_operator(active, d, &p, &mut q);
            let pq = dot(&p, &q);
            if !(pq > 0.0) {
                return Err(Error::LinearSolve(format!("operator not positive definite (pᵀAp = {pq:e})")));
            }
            let alpha = rz / pq;
            for i in 0..len {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            let rel = dot(&r, &r).sqrt() / bnorm;
            if rel <= rtol {
                return Ok(CgReport { x, iterations: it, relative_residual: rel });
            }
            for i in 0..len {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..len {
                p[i] = z[i] + beta * p[i];
            }
        }
        let rel = dot(&r, &r).sqrt() / bnorm;
        Err(Error::LinearSolve(format!("CG stalled at relative residual {rel:e}")))
    }
}

#[derive(Clone, Debug)]
pub struct CgReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}
