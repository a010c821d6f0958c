//! Cubic differentials, gridded scalar fields and flat geodesics.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROOT_RESIDUAL_REL: f64 = 1e-8;

/// Polynomial cubic differential `λ·U₀(z) dz³` on a single chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicDifferential {
    /// Coefficients of `U₀`, lowest degree first.
    coefficients: Vec<Complex64>,
    lambda: f64,
}

impl CubicDifferential {
    pub fn new(coefficients: Vec<Complex64>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be finite and > 0, got {lambda}")));
        }
        let mut coefficients = coefficients;
        while coefficients.last().is_some_and(|c| *c == Complex64::new(0.0, 0.0)) {
            coefficients.pop();
        }
        if coefficients.is_empty() {
            return Err(Error::invalid("cubic differential is identically zero"));
        }
        if coefficients.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::invalid("non-finite coefficient"));
        }
        Ok(Self { coefficients, lambda })
    }

    /// `U₀ = c` (constant, zero-free).
    pub fn constant(c: f64, lambda: f64) -> Result<Self> {
        Self::new(vec![Complex64::new(c, 0.0)], lambda)
    }

    pub fn from_real(coefficients: &[f64], lambda: f64) -> Result<Self> {
        Self::new(coefficients.iter().map(|c| Complex64::new(*c, 0.0)).collect(), lambda)
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn is_constant(&self) -> bool {
        self.degree() == 0
    }

    /// Same `U₀` with a different scale.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.coefficients.clone(), lambda)
    }

    /// `U₀(z)` (unscaled).
    pub fn eval_u0(&self, z: Complex64) -> Complex64 {
        self.coefficients.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c)
    }

    /// `U₀'(z)`.
    pub fn eval_u0_prime(&self, z: Complex64) -> Complex64 {
        let n = self.coefficients.len();
        let mut acc = Complex64::new(0.0, 0.0);
        for k in (1..n).rev() {
            acc = acc * z + self.coefficients[k] * k as f64;
        }
        acc
    }

    /// `λ·U₀(z)`.
    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.eval_u0(z) * self.lambda
    }

    /// `Σ|cₖ||z|ᵏ`, the natural scale for rounding in [`Self::eval_u0`].
    pub fn coefficient_scale(&self, z: Complex64) -> f64 {
        let r = z.norm();
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * r + c.norm())
    }

    /// True when `|U₀(z)|` is indistinguishable from rounding noise.
    pub fn is_singular_at(&self, z: Complex64) -> bool {
        self.eval_u0(z).norm() <= 64.0 * f64::EPSILON * self.coefficient_scale(z)
    }

    /// `φ` with `e^φ = 2^{1/3}|λU₀(z)|^{2/3}`, the conformal factor of the flat metric.
    pub fn flat_metric_factor(&self, z: Complex64) -> Result<f64> {
        if self.is_singular_at(z) {
            return Err(Error::SingularPoint { z, detail: "flat metric factor undefined at a zero of U".into() });
        }
        Ok(std::f64::consts::LN_2 / 3.0 + (2.0 / 3.0) * self.eval(z).norm().ln())
    }

    /// `∂_z φ = U₀'/(3U₀)` for the flat metric factor.
    pub fn flat_metric_factor_z(&self, z: Complex64) -> Complex64 {
        self.eval_u0_prime(z) / (self.eval_u0(z) * 3.0)
    }

    /// Roots of `U₀`, with multiplicity.
    pub fn zeros(&self) -> Vec<Complex64> {
        polynomial_roots(&self.coefficients)
    }

    /// Smallest distance from `z` to a zero of `U₀` (infinite when zero-free).
    pub fn distance_to_zeros(&self, z: Complex64) -> f64 {
        self.zeros().iter().map(|r| (z - r).norm()).fold(f64::INFINITY, f64::min)
    }

    /// `∫_path (λU₀/2)^{1/3} dζ`, continuing the cube root along the path from the
    /// principal branch at the start.
    pub fn flat_coordinate(&self, path: &[Complex64], clearance: f64) -> Result<Complex64> {
        self.integrate_cube_root(path, clearance, self.lambda, None).map(|(w, _)| w)
    }

    /// Same integral for `U₀` alone (the chart in which `U₀ = 2dw³`), with an
    /// explicit starting branch. Returns the integral and the branch value at the end.
    pub fn flat_coordinate_u0(
        &self,
        path: &[Complex64],
        clearance: f64,
        start_branch: Option<Complex64>,
    ) -> Result<(Complex64, Complex64)> {
        self.integrate_cube_root(path, clearance, 1.0, start_branch)
    }

    fn integrate_cube_root(
        &self,
        path: &[Complex64],
        clearance: f64,
        scale: f64,
        start_branch: Option<Complex64>,
    ) -> Result<(Complex64, Complex64)> {
        if path.len() < 2 {
            return Err(Error::invalid("path needs at least two points"));
        }
        let zeros = self.zeros();
        let f = |z: Complex64| self.eval_u0(z) * (scale / 2.0);
        let mut branch = match start_branch {
            Some(b) => nearest_cube_root(f(path[0]), b),
            None => principal_cube_root(f(path[0])),
        };
        let mut total = Complex64::new(0.0, 0.0);
        for edge in path.windows(2) {
            let (a, b) = (edge[0], edge[1]);
            let dmin = zeros.iter().map(|r| distance_to_segment(*r, a, b)).fold(f64::INFINITY, f64::min);
            if dmin < clearance {
                return Err(Error::SingularPoint {
                    z: a,
                    detail: format!("path passes within {dmin:e} of a zero (clearance {clearance:e})"),
                });
            }
            let len = (b - a).norm();
            if len == 0.0 {
                continue;
            }
            let pieces = if dmin.is_finite() { (len / (0.25 * dmin)).ceil().max(1.0) as usize } else { 1 };
            for p in 0..pieces {
                let za = a + (b - a) * (p as f64 / pieces as f64);
                let zb = a + (b - a) * ((p + 1) as f64 / pieces as f64);
                let reference = branch;
                let g = |t: f64| nearest_cube_root(f(za + (zb - za) * t), reference);
                let integral = adaptive_simpson(&g, 0.0, 1.0, 1e-14 * (1.0 + reference.norm()), 40);
                total += integral * (zb - za);
                branch = g(1.0);
            }
        }
        Ok((total, branch))
    }
}

pub(crate) fn principal_cube_root(c: Complex64) -> Complex64 {
    if c.norm() == 0.0 {
        return c;
    }
    Complex64::from_polar(c.norm().cbrt(), c.arg() / 3.0)
}

/// The cube root of `c` closest to `reference`.
pub(crate) fn nearest_cube_root(c: Complex64, reference: Complex64) -> Complex64 {
    let p = principal_cube_root(c);
    let w = Complex64::from_polar(1.0, 2.0 * PI / 3.0);
    [p, p * w, p * w * w].into_iter().min_by(|x, y| (x - reference).norm().total_cmp(&(y - reference).norm())).unwrap_or(p)
}

fn distance_to_segment(p: Complex64, a: Complex64, b: Complex64) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_sqr();
    if l2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a) * ab.conj()).re / l2;
    (p - (a + ab * t.clamp(0.0, 1.0))).norm()
}

fn adaptive_simpson<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> Complex64 {
    fn simpson(fa: Complex64, fm: Complex64, fb: Complex64, h: f64) -> Complex64 {
        (fa + fm * 4.0 + fb) * (h / 6.0)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> Complex64>(
        f: &F,
        a: f64,
        b: f64,
        fa: Complex64,
        fm: Complex64,
        fb: Complex64,
        whole: Complex64,
        tol: f64,
        depth: usize,
    ) -> Complex64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.norm() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, depth)
}

/// Roots of `Σ cₖ zᵏ` (lowest degree first) by Aberth–Ehrlich iteration with a
/// final Newton polish. Exact zeros at the origin are split off first.
pub fn polynomial_roots(coefficients: &[Complex64]) -> Vec<Complex64> {
    let zero = Complex64::new(0.0, 0.0);
    let mut c: Vec<Complex64> = coefficients.to_vec();
    while c.last() == Some(&zero) {
        c.pop();
    }
    let mut roots = Vec::new();
    let lead_zeros = c.iter().take_while(|x| **x == zero).count();
    roots.extend(std::iter::repeat_n(zero, lead_zeros));
    let c = &c[lead_zeros..];
    let n = c.len().saturating_sub(1);
    if n == 0 {
        return roots;
    }

    let eval = |z: Complex64| -> (Complex64, Complex64) {
        let mut p = zero;
        let mut dp = zero;
        for ck in c.iter().rev() {
            dp = dp * z + p;
            p = p * z + ck;
        }
        (p, dp)
    };

    let lead = c[n];
    let radius = 1.0 + c[..n].iter().map(|x| (x / lead).norm()).fold(0.0, f64::max);
    let mut z: Vec<Complex64> =
        (0..n).map(|k| Complex64::from_polar(0.5 * radius, 2.0 * PI * k as f64 / n as f64 + 0.4)).collect();

    for _ in 0..500 {
        let mut max_step = 0.0f64;
        for k in 0..n {
            let (p, dp) = eval(z[k]);
            if p == zero {
                continue;
            }
            let ratio = p / dp;
            let repulsion: Complex64 = (0..n).filter(|j| *j != k).map(|j| (z[k] - z[j]).inv()).sum();
            let step = ratio / (Complex64::new(1.0, 0.0) - ratio * repulsion);
            if step.re.is_finite() && step.im.is_finite() {
                z[k] -= step;
                max_step = max_step.max(step.norm() / (1.0 + z[k].norm()));
            }
        }
        if max_step < 1e-15 {
            break;
        }
    }
    for zk in z.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = eval(*zk);
            if dp.norm() == 0.0 || p == zero {
                break;
            }
            let next = *zk - p / dp;
            if eval(next).0.norm() < p.norm() {
                *zk = next;
            } else {
                break;
            }
        }
    }
    roots.extend(z);
    roots.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    roots
}

/// Residual check used by tests and diagnostics: `|U₀(root)| / Σ|cₖ||root|ᵏ`.
pub fn root_relative_residual(u: &CubicDifferential, root: Complex64) -> f64 {
    u.eval_u0(root).norm() / u.coefficient_scale(root).max(f64::MIN_POSITIVE)
}

/// Accepted relative residual of a computed zero of `U₀`.
pub const fn root_residual_tolerance() -> f64 {
    ROOT_RESIDUAL_REL
}

/// Uniform grid over `[x0,x1]×[y0,y1]`. Periodic axes omit the duplicate end node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub nx: usize,
    pub ny: usize,
    pub periodic_x: bool,
    pub periodic_y: bool,
}

impl Grid2D {
    pub fn new(x: (f64, f64), y: (f64, f64), nx: usize, ny: usize, periodic: (bool, bool)) -> Result<Self> {
        let g = Grid2D { x0: x.0, x1: x.1, y0: y.0, y1: y.1, nx, ny, periodic_x: periodic.0, periodic_y: periodic.1 };
        g.validate()?;
        Ok(g)
    }

    /// Doubly periodic grid on `[x0,x0+w]×[y0,y0+h]`.
    pub fn torus(x: (f64, f64), y: (f64, f64), nx: usize, ny: usize) -> Result<Self> {
        Self::new(x, y, nx, ny, (true, true))
    }

    /// Non-periodic grid including both end nodes on each axis.
    pub fn rectangle(x: (f64, f64), y: (f64, f64), nx: usize, ny: usize) -> Result<Self> {
        Self::new(x, y, nx, ny, (false, false))
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 8 || self.ny < 8 {
            return Err(Error::invalid(format!("grid needs at least 8 nodes per axis, got {}×{}", self.nx, self.ny)));
        }
        let finite = [self.x0, self.x1, self.y0, self.y1].iter().all(|v| v.is_finite());
        if !finite || !(self.x1 > self.x0) || !(self.y1 > self.y0) {
            return Err(Error::invalid("grid bounds must be finite with x1 > x0 and y1 > y0"));
        }
        Ok(())
    }

    pub fn hx(&self) -> f64 {
        let cells = if self.periodic_x { self.nx } else { self.nx - 1 };
        (self.x1 - self.x0) / cells as f64
    }

    pub fn hy(&self) -> f64 {
        let cells = if self.periodic_y { self.ny } else { self.ny - 1 };
        (self.y1 - self.y0) / cells as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic_x && self.periodic_y
    }

    /// Row-major index (x fastest).
    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    #[inline]
    pub fn node(&self, ix: usize, iy: usize) -> Complex64 {
        Complex64::new(self.x0 + ix as f64 * self.hx(), self.y0 + iy as f64 * self.hy())
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..self.ny).flat_map(move |iy| (0..self.nx).map(move |ix| (ix, iy, self.node(ix, iy))))
    }

    pub fn diameter(&self) -> f64 {
        (self.x1 - self.x0).hypot(self.y1 - self.y0)
    }

    /// Default clearance from zeros: `10⁻³ ×` domain diameter.
    pub fn default_clearance(&self) -> f64 {
        1e-3 * self.diameter()
    }

    /// Fractional cell coordinates of `z`, wrapped on periodic axes.
    fn locate(&self, z: Complex64) -> Result<(f64, f64)> {
        let coord = |v: f64, v0: f64, v1: f64, h: f64, n: usize, periodic: bool| -> Option<f64> {
            if periodic {
                let w = v1 - v0;
                let u = (v - v0).rem_euclid(w) / h;
                Some(if u >= n as f64 { 0.0 } else { u })
            } else {
                let slack = 1e-12 * (v1 - v0);
                if v < v0 - slack || v > v1 + slack {
                    None
                } else {
                    Some(((v - v0) / h).clamp(0.0, (n - 1) as f64))
                }
            }
        };
        let u = coord(z.re, self.x0, self.x1, self.hx(), self.nx, self.periodic_x);
        let v = coord(z.im, self.y0, self.y1, self.hy(), self.ny, self.periodic_y);
        match (u, v) {
            (Some(u), Some(v)) => Ok((u, v)),
            _ => Err(Error::OutOfDomain { z }),
        }
    }

    /// Bilinear stencil: four `(index, weight)` pairs.
    pub fn bilinear(&self, z: Complex64) -> Result<[(usize, f64); 4]> {
        let (u, v) = self.locate(z)?;
        let (mut i0, mut j0) = (u.floor() as usize, v.floor() as usize);
        if !self.periodic_x && i0 >= self.nx - 1 {
            i0 = self.nx - 2;
        }
        if !self.periodic_y && j0 >= self.ny - 1 {
            j0 = self.ny - 2;
        }
        let (fx, fy) = (u - i0 as f64, v - j0 as f64);
        let i1 = if self.periodic_x { (i0 + 1) % self.nx } else { i0 + 1 };
        let j1 = if self.periodic_y { (j0 + 1) % self.ny } else { j0 + 1 };
        Ok([
            (self.index(i0, j0), (1.0 - fx) * (1.0 - fy)),
            (self.index(i1, j0), fx * (1.0 - fy)),
            (self.index(i0, j1), (1.0 - fx) * fy),
            (self.index(i1, j1), fx * fy),
        ])
    }
}

/// Planar regions used as Dirichlet domains and as the compact set `K`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Rectangle { x0: f64, x1: f64, y0: f64, y1: f64 },
    Disk { center: Complex64, radius: f64 },
    Annulus { center: Complex64, inner: f64, outer: f64 },
}

impl Region {
    pub fn contains(&self, z: Complex64) -> bool {
        match *self {
            Region::Rectangle { x0, x1, y0, y1 } => z.re >= x0 && z.re <= x1 && z.im >= y0 && z.im <= y1,
            Region::Disk { center, radius } => (z - center).norm() < radius,
            Region::Annulus { center, inner, outer } => {
                let r = (z - center).norm();
                r >= inner && r <= outer
            }
        }
    }
}

/// Scalar field sampled at the nodes of a [`Grid2D`] (row-major, x fastest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub grid: Grid2D,
    pub values: Vec<f64>,
}

/// Nodal first derivatives of a [`ScalarField`].
#[derive(Clone, Debug)]
pub struct FieldGradient {
    pub dx: ScalarField,
    pub dy: ScalarField,
}

impl ScalarField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} values for a {}×{} grid", values.len(), grid.nx, grid.ny)));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(Complex64) -> f64) -> Self {
        let values = grid.nodes().map(|(_, _, z)| f(z)).collect();
        Self { grid, values }
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.grid.index(ix, iy)]
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("fields live on different grids".into()));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Bilinear interpolation; exact at nodes.
    pub fn interpolate(&self, z: Complex64) -> Result<f64> {
        let w = self.grid.bilinear(z)?;
        Ok(w.iter().map(|(i, c)| self.values[*i] * c).sum())
    }

    /// Second-order nodal derivatives: central in the interior (and across
    /// periodic seams), one-sided second order on Dirichlet edges.
    pub fn gradient(&self) -> FieldGradient {
        let g = self.grid;
        let (hx, hy) = (g.hx(), g.hy());
        let mut dx = vec![0.0; g.len()];
        let mut dy = vec![0.0; g.len()];
        let f = |ix: usize, iy: usize| self.values[g.index(ix, iy)];
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let k = g.index(ix, iy);
                dx[k] = diff1(ix, g.nx, g.periodic_x, hx, |i| f(i, iy));
                dy[k] = diff1(iy, g.ny, g.periodic_y, hy, |j| f(ix, j));
            }
        }
        FieldGradient { dx: ScalarField { grid: g, values: dx }, dy: ScalarField { grid: g, values: dy } }
    }

    /// `ψ_z = (ψ_x − iψ_y)/2` at `z`, nodal differences interpolated bilinearly.
    pub fn complex_derivative(&self, z: Complex64) -> Result<Complex64> {
        self.gradient().complex_derivative(z)
    }

    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut out = String::with_capacity(self.values.len() * 24 + 128);
        out.push_str("# scalar-field\n");
        out.push_str("nx,ny,x0,x1,y0,y1,periodic_x,periodic_y\n");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            g.nx,
            g.ny,
            fmt_f64(g.x0),
            fmt_f64(g.x1),
            fmt_f64(g.y0),
            fmt_f64(g.y1),
            g.periodic_x,
            g.periodic_y
        );
        for iy in 0..g.ny {
            let row: Vec<String> = (0..g.nx).map(|ix| fmt_f64(self.at(ix, iy))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let bad = |line: usize, msg: &str| Error::Parse(format!("line {}: {msg}", line + 1));
        let (hl, header) = lines.next().ok_or_else(|| Error::Parse("missing header".into()))?;
        if header.trim() != "nx,ny,x0,x1,y0,y1,periodic_x,periodic_y" {
            return Err(bad(hl, "unexpected header"));
        }
        let (ml, meta) = lines.next().ok_or_else(|| Error::Parse("missing grid line".into()))?;
        let m: Vec<&str> = meta.split(',').map(str::trim).collect();
        if m.len() != 8 {
            return Err(bad(ml, "grid line needs 8 fields"));
        }
        let pu = |s: &str| s.parse::<usize>().map_err(|e| bad(ml, &e.to_string()));
        let pf = |s: &str| s.parse::<f64>().map_err(|e| bad(ml, &e.to_string()));
        let pb = |s: &str| s.parse::<bool>().map_err(|e| bad(ml, &e.to_string()));
        let grid = Grid2D::new((pf(m[2])?, pf(m[3])?), (pf(m[4])?, pf(m[5])?), pu(m[0])?, pu(m[1])?, (pb(m[6])?, pb(m[7])?))?;
        let mut values = Vec::with_capacity(grid.len());
        for (ln, line) in lines {
            for tok in line.split(',') {
                values.push(tok.trim().parse::<f64>().map_err(|e| bad(ln, &e.to_string()))?);
            }
        }
        Self::new(grid, values)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ScalarField = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(f.grid, f.values)
    }
}

impl FieldGradient {
    pub fn complex_derivative(&self, z: Complex64) -> Result<Complex64> {
        let w = self.dx.grid.bilinear(z)?;
        let (mut px, mut py) = (0.0, 0.0);
        for (i, c) in w {
            px += self.dx.values[i] * c;
            py += self.dy.values[i] * c;
        }
        Ok(Complex64::new(0.5 * px, -0.5 * py))
    }
}

fn diff1(i: usize, n: usize, periodic: bool, h: f64, f: impl Fn(usize) -> f64) -> f64 {
    if periodic {
        return (f((i + 1) % n) - f((i + n - 1) % n)) / (2.0 * h);
    }
    if i == 0 {
        (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h)
    } else if i == n - 1 {
        (3.0 * f(n - 1) - 4.0 * f(n - 2) + f(n - 3)) / (2.0 * h)
    } else {
        (f(i + 1) - f(i - 1)) / (2.0 * h)
    }
}

/// 17 significant digits: enough to round-trip any finite `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Straight segment in the flat chart of `U₀` (where `U₀ = 2dw³`), starting at a
/// point of the `z`-chart: displacement `w ↦ w + L e^{iθ}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicSegment {
    pub start: Complex64,
    pub length: f64,
    pub theta: f64,
    /// Minimum allowed distance from a zero of `U₀`.
    pub clearance: f64,
}

impl GeodesicSegment {
    pub fn new(start: Complex64, length: f64, theta: f64, clearance: f64) -> Result<Self> {
        if !(length >= 0.0) || !length.is_finite() {
            return Err(Error::invalid(format!("segment length must be ≥ 0, got {length}")));
        }
        if !(clearance > 0.0) {
            return Err(Error::invalid("clearance must be > 0"));
        }
        Ok(Self { start, length, theta, clearance })
    }

    /// Segment from `z_a` to `z_b` in a chart that is already flat (`U₀ ≡ 2`).
    pub fn between(z_a: Complex64, z_b: Complex64, clearance: f64) -> Result<Self> {
        let d = z_b - z_a;
        Self::new(z_a, d.norm(), d.arg(), clearance)
    }

    /// `c = L e^{iθ}`.
    pub fn displacement(&self) -> Complex64 {
        Complex64::from_polar(self.length, self.theta)
    }

    pub fn direction(&self) -> Complex64 {
        Complex64::from_polar(1.0, self.theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn eval_examples() {
        let u = CubicDifferential::constant(2.0, 1.0).unwrap();
        assert_eq!(u.eval(c(3.0, 4.0)), c(2.0, 0.0));
        let u = CubicDifferential::from_real(&[0.0, 2.0], 5.0).unwrap();
        assert_eq!(u.eval(c(1.0, 0.0)), c(10.0, 0.0));
        let u = CubicDifferential::from_real(&[0.0, 2.0], 1.0).unwrap();
        assert_eq!(u.eval(c(0.0, 0.0)), c(0.0, 0.0));
    }

    #[test]
    fn rejects_zero_differential() {
        assert!(CubicDifferential::from_real(&[0.0, 0.0], 1.0).is_err());
        assert!(CubicDifferential::constant(2.0, 0.0).is_err());
    }

    #[test]
    fn flat_metric_factor_examples() {
        let ln2 = std::f64::consts::LN_2;
        let u = CubicDifferential::constant(2.0, 1.0).unwrap();
        assert!((u.flat_metric_factor(c(0.3, 0.1)).unwrap() - ln2).abs() < 1e-15);
        let u = CubicDifferential::constant(2.0, 8.0).unwrap();
        assert!((u.flat_metric_factor(c(0.0, 0.0)).unwrap() - 3.0 * ln2).abs() < 1e-14);
        let u = CubicDifferential::from_real(&[0.0, 2.0], 1.0).unwrap();
        assert!(matches!(u.flat_metric_factor(c(0.0, 0.0)), Err(Error::SingularPoint { .. })));
    }

    #[test]
    fn flat_metric_factor_cubes_to_2u2() {
        let u = CubicDifferential::new(vec![c(1.0, 2.0), c(-0.5, 0.3), c(0.0, 1.0)], 7.0).unwrap();
        for z in [c(0.4, -1.1), c(2.0, 0.5), c(-3.0, -0.2)] {
            let phi = u.flat_metric_factor(z).unwrap();
            let lhs = (3.0 * phi).exp();
            let rhs = 2.0 * u.eval(z).norm_sqr();
            assert!((lhs / rhs - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_coordinate_examples() {
        let cc = c(0.7, -0.4);
        let u = CubicDifferential::constant(2.0, 1.0).unwrap();
        let w = u.flat_coordinate(&[c(0.0, 0.0), cc], 1e-3).unwrap();
        assert!((w - cc).norm() < 1e-13);

        let u = CubicDifferential::constant(2.0, 27.0).unwrap();
        let w = u.flat_coordinate(&[c(0.0, 0.0), cc], 1e-3).unwrap();
        assert!((w - cc * 3.0).norm() < 1e-12);

        let u = CubicDifferential::from_real(&[0.0, 0.0, 0.0, 2.0], 1.0).unwrap();
        let w = u.flat_coordinate(&[c(1.0, 0.0), c(2.0, 0.0)], 1e-3).unwrap();
        assert!((w - c(1.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn flat_coordinate_additive_and_antisymmetric() {
        let u = CubicDifferential::from_real(&[-1.0, 0.0, 2.0], 3.0).unwrap();
        let (a, b, m) = (c(2.0, 1.0), c(-1.5, 2.0), c(0.3, 2.5));
        let whole = u.flat_coordinate(&[a, m, b], 1e-3).unwrap();
        let first = u.flat_coordinate(&[a, m], 1e-3).unwrap();
        // Continue the second piece on the branch reached at m.
        let (_, branch) = u.flat_coordinate_u0(&[a, m], 1e-3, None).unwrap();
        let (second_u0, _) = u.flat_coordinate_u0(&[m, b], 1e-3, Some(branch)).unwrap();
        let second = second_u0 * 3f64.cbrt();
        assert!((whole - (first + second)).norm() < 1e-9);

        let (fwd, end_branch) = u.flat_coordinate_u0(&[a, m, b], 1e-3, None).unwrap();
        let (back, _) = u.flat_coordinate_u0(&[b, m, a], 1e-3, Some(end_branch)).unwrap();
        assert!((fwd + back).norm() < 1e-9);
    }

    #[test]
    fn flat_coordinate_refuses_paths_near_zeros() {
        let u = CubicDifferential::from_real(&[0.0, 2.0], 1.0).unwrap();
        let r = u.flat_coordinate(&[c(-1.0, 1e-4), c(1.0, 1e-4)], 1e-3);
        assert!(matches!(r, Err(Error::SingularPoint { .. })));
    }

    #[test]
    fn zeros_examples() {
        assert!(CubicDifferential::constant(2.0, 1.0).unwrap().zeros().is_empty());
        let z = CubicDifferential::from_real(&[0.0, 2.0], 1.0).unwrap().zeros();
        assert_eq!(z, vec![c(0.0, 0.0)]);
        let u = CubicDifferential::from_real(&[-2.0, 0.0, 2.0], 1.0).unwrap();
        let z = u.zeros();
        assert_eq!(z.len(), 2);
        assert!((z[0] - c(1.0, 0.0)).norm() < 1e-12 && (z[1] - c(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn zeros_with_multiplicity() {
        // 2(z − i)²(z + 2) = 2z³ + (4 − 4i)z² + (−2 − 8i)z − 4 ... expanded below.
        let i = c(0.0, 1.0);
        let two = c(2.0, 0.0);
        // (z−i)² = z² − 2iz − 1; times (z+2) = z³ + (2−2i)z² + (−1−4i)z − 2
        let coeffs = vec![c(-2.0, 0.0) * two, c(-1.0, -4.0) * two, c(2.0, -2.0) * two, two];
        let u = CubicDifferential::new(coeffs, 1.0).unwrap();
        let z = u.zeros();
        assert_eq!(z.len(), 3);
        for r in &z {
            assert!(root_relative_residual(&u, *r) < root_residual_tolerance());
        }
        assert!(z.iter().filter(|r| (**r - i).norm() < 1e-6).count() == 2);
        assert!(z.iter().any(|r| (*r + two).norm() < 1e-10));
    }

    fn unit_grid(periodic: bool) -> Grid2D {
        if periodic {
            Grid2D::torus((0.0, 1.0), (0.0, 1.0), 16, 16).unwrap()
        } else {
            Grid2D::rectangle((0.0, 1.0), (0.0, 1.0), 11, 11).unwrap()
        }
    }

    #[test]
    fn grid_spacing_rules() {
        assert!((unit_grid(true).hx() - 1.0 / 16.0).abs() < 1e-16);
        assert!((unit_grid(false).hx() - 0.1).abs() < 1e-16);
        assert!(Grid2D::rectangle((0.0, 1.0), (0.0, 1.0), 7, 10).is_err());
    }

    #[test]
    fn complex_derivative_examples() {
        let g = unit_grid(false);
        let cst = ScalarField::constant(g, 3.5);
        assert!(cst.complex_derivative(c(0.33, 0.71)).unwrap().norm() < 1e-14);
        let x = ScalarField::from_fn(g, |z| z.re);
        assert!((x.complex_derivative(c(0.33, 0.71)).unwrap() - c(0.5, 0.0)).norm() < 1e-12);
        assert!((x.complex_derivative(c(0.0, 1.0)).unwrap() - c(0.5, 0.0)).norm() < 1e-12);
        let y = ScalarField::from_fn(g, |z| z.im);
        assert!((y.complex_derivative(c(0.9, 0.05)).unwrap() - c(0.0, -0.5)).norm() < 1e-12);
        assert!(matches!(x.complex_derivative(c(1.5, 0.5)), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn complex_derivative_second_order() {
        let err = |n: usize| {
            let g = Grid2D::rectangle((0.0, 3.0), (0.0, 3.0), n, n).unwrap();
            let f = ScalarField::from_fn(g, |z| z.re.sin() * z.im.sin());
            let grad = f.gradient();
            g.nodes()
                .map(|(_, _, z)| {
                    let exact = c(0.5 * z.re.cos() * z.im.sin(), -0.5 * z.re.sin() * z.im.cos());
                    (grad.complex_derivative(z).unwrap() - exact).norm()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(31), err(61));
        assert!(e1 / e2 > 3.5, "ratio {}", e1 / e2);
        assert!(e1 < 0.5 * 0.1 * 0.1);
    }

    #[test]
    fn interpolation_exact_at_nodes_and_periodic() {
        let g = unit_grid(true);
        let f = ScalarField::from_fn(g, |z| (2.0 * PI * z.re).sin() + z.im.cos());
        for (ix, iy, z) in g.nodes() {
            assert_eq!(f.interpolate(z).unwrap(), f.at(ix, iy));
        }
        let a = f.interpolate(c(0.2, 0.3)).unwrap();
        let b = f.interpolate(c(1.2, -0.7)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn csv_and_json_round_trip_bit_exact() {
        let g = Grid2D::new((-1.0, 1.0), (0.0, 0.7), 9, 12, (false, true)).unwrap();
        let f = ScalarField::from_fn(g, |z| (z.re * 1e10).sin() / 3.0 + z.im.exp() * 1e-300 - 0.0);
        let back = ScalarField::from_csv(&f.to_csv()).unwrap();
        assert_eq!(back.grid, f.grid);
        assert!(back.values.iter().zip(&f.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        let back = ScalarField::from_json(&f.to_json().unwrap()).unwrap();
        assert!(back.values.iter().zip(&f.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let text = "nx,ny,x0,x1,y0,y1,periodic_x,periodic_y\n8,8,0,1,0,1,true,maybe\n";
        let err = ScalarField::from_csv(text).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn segment_geometry() {
        let s = GeodesicSegment::between(c(0.0, 0.0), c(0.0, 2.0), 1e-3).unwrap();
        assert!((s.length - 2.0).abs() < 1e-15 && (s.theta - PI / 2.0).abs() < 1e-15);
        assert!((s.displacement() - c(0.0, 2.0)).norm() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn csv_round_trip(vals in proptest::collection::vec(-1e300f64..1e300, 64)) {
                let g = Grid2D::torus((0.0, 1.0), (0.0, 1.0), 8, 8).unwrap();
                let f = ScalarField::new(g, vals).unwrap();
                let back = ScalarField::from_csv(&f.to_csv()).unwrap();
                prop_assert!(back.values.iter().zip(&f.values).all(|(a, b)| a.to_bits() == b.to_bits()));
            }

            #[test]
            fn linear_fields_have_exact_derivatives(a in -5.0f64..5.0, b in -5.0f64..5.0, x in 0.0f64..1.0, y in 0.0f64..1.0) {
                let g = Grid2D::rectangle((0.0, 1.0), (0.0, 1.0), 9, 13).unwrap();
                let f = ScalarField::from_fn(g, |z| a * z.re + b * z.im + 1.0);
                let d = f.complex_derivative(Complex64::new(x, y)).unwrap();
                prop_assert!((d - Complex64::new(0.5 * a, -0.5 * b)).norm() < 1e-12);
            }
        }
    }
}
