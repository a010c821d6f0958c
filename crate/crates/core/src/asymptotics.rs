//! The perturbed diagonal system `Φ' = (λ^{1/3}diag(μ) + B)Φ`, its Picard map,
//! and the eigenvalue brackets built on it.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cubic::{mu_roots, MuTriple};
use crate::error::{Error, Result};
use crate::field::{fmt_f64, GeodesicSegment};
use crate::frame::{scale_frame, FrameField, FrameMatrix, HolonomyResult, Mat3};

/// Default number of Picard quadrature intervals.
pub const PICARD_SAMPLES: usize = 4096;
/// Default slack `ε = ε′` in the eigenvalue brackets.
pub const BRACKET_SLACK: f64 = 0.05;
/// Ball radius `N` of the Picard map.
pub const PICARD_BALL: f64 = 2.0;
const DISTANCE_FLOOR: f64 = 1e-14;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Eigenvectors of `M = e^{iθ}C + e^{−iθ}Cᵀ` (`C` the cyclic shift) as columns,
/// ordered to match `mu_roots(θ)`: `v_m = (1, ωᵐ, ω²ᵐ)/√3`, `μ = 2cos(θ + 2πm/3)`.
pub fn diagonalizer(theta: f64) -> Mat3 {
    let mut ms: Vec<(f64, usize)> = (0..3).map(|m| (2.0 * (theta + 2.0 * PI * m as f64 / 3.0).cos(), m)).collect();
    ms.sort_by(|a, b| b.0.total_cmp(&a.0));
    let s = 3f64.sqrt().recip();
    Mat3::from_fn(|row, col| {
        let m = ms[col].1 as f64;
        Complex64::from_polar(s, 2.0 * PI * m * row as f64 / 3.0)
    })
}

/// `B` sampled on a uniform grid of `[0, L]`, in the eigenbasis of `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedSystem {
    pub mu: MuTriple,
    pub lambda: f64,
    pub length: f64,
    /// `B(t_k)`, `t_k = kL/n`, `k = 0..=n`.
    pub b: Vec<Mat3>,
    /// `sup |bᵢⱼ|`.
    pub r: f64,
}

impl PerturbedSystem {
    pub fn new(mu: MuTriple, lambda: f64, length: f64, b: Vec<Mat3>) -> Result<Self> {
        if !(lambda > 0.0) || !(length > 0.0) {
            return Err(Error::invalid("lambda and length must be > 0"));
        }
        if b.len() < 3 || b.len().is_multiple_of(2) {
            return Err(Error::invalid("need an odd number (≥ 3) of samples"));
        }
        let r = b.iter().flat_map(|m| m.iter().map(|v| v.norm())).fold(0.0, f64::max);
        Ok(Self { mu, lambda, length, b, r })
    }

    pub fn constant(theta: f64, lambda: f64, length: f64, b: Mat3, intervals: usize) -> Result<Self> {
        Self::new(mu_roots(theta), lambda, length, vec![b; intervals + 1])
    }

    pub fn intervals(&self) -> usize {
        self.b.len() - 1
    }

    pub fn h(&self) -> f64 {
        self.length / self.intervals() as f64
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.h()
    }

    /// `λ^{1/3}μᵢ`.
    pub fn rates(&self) -> [f64; 3] {
        self.mu.as_array().map(|m| self.lambda.cbrt() * m)
    }

    /// Every other sample: the same system on a grid twice as coarse.
    pub fn coarsened(&self) -> Result<Self> {
        if !self.intervals().is_multiple_of(4) {
            return Err(Error::invalid("coarsening needs a multiple of 4 intervals"));
        }
        let b = self.b.iter().step_by(2).copied().collect();
        Self::new(self.mu, self.lambda, self.length, b)
    }

    /// Weighted column `φ e^{−λ^{1/3}μ₁t}` of the full system by RK4 with step
    /// `2h` (midpoints are the odd samples), reported at the even samples.
    pub fn rk_column(&self, j: usize) -> Vec<[Complex64; 3]> {
        let rates = self.rates();
        let a = |k: usize| {
            let mut m = self.b[k];
            for i in 0..3 {
                m[(i, i)] += c(rates[i] - rates[0]);
            }
            m
        };
        let mut y = nalgebra::Vector3::from_fn(|i, _| if i == j { c(1.0) } else { c(0.0) });
        let h2 = 2.0 * self.h();
        let mut out = vec![[y[0], y[1], y[2]]];
        for k in (0..self.intervals()).step_by(2) {
            let (a0, a1, a2) = (a(k), a(k + 1), a(k + 2));
            let k1 = a0 * y;
            let k2 = a1 * (y + k1 * c(0.5 * h2));
            let k3 = a1 * (y + k2 * c(0.5 * h2));
            let k4 = a2 * (y + k3 * c(h2));
            y += (k1 + k2 * c(2.0) + k3 * c(2.0) + k4) * c(h2 / 6.0);
            out.push([y[0], y[1], y[2]]);
        }
        out
    }
}

/// `(e^{2RL}·2RL, certified)`.
pub fn contraction_certificate(r: f64, length: f64) -> Result<(f64, bool)> {
    if !(r >= 0.0) || !(length > 0.0) {
        return Err(Error::invalid("need R ≥ 0 and L > 0"));
    }
    let x = 2.0 * r * length;
    let factor = x.exp() * x;
    Ok((factor, factor < 1.0))
}

/// Output of the Picard iteration for one column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedColumn {
    pub column: usize,
    pub intervals: usize,
    /// `ĝᵢ(t_k) = φᵢ(t_k) e^{−λ^{1/3}μ₁t_k}`.
    pub values: Vec<[Complex64; 3]>,
    /// `sup_{i,k} |ĝᵢ(t_k)|`.
    pub norm: f64,
    pub iterations: usize,
    /// Sup-distances between consecutive iterates.
    pub distances: Vec<f64>,
    pub factor: f64,
    pub certified: bool,
    /// Distances shrank by at least `1.1 × factor` each iteration (down to the
    /// rounding floor).
    pub contraction_ok: bool,
    /// Richardson estimate from the grid with twice the spacing.
    pub quadrature_error: f64,
}

impl WeightedColumn {
    pub fn last_distance(&self) -> f64 {
        self.distances.last().copied().unwrap_or(0.0)
    }
}

/// Cumulative integrals `∫_0^{t_k} f` with a third-order rule on each interval.
fn cumulative(f: &[Complex64], h: f64) -> Vec<Complex64> {
    let n = f.len();
    let mut out = vec![c(0.0); n];
    for k in 0..n - 1 {
        out[k + 1] = out[k] + interval_rule(f, k, h);
    }
    out
}

/// `∫_{t_k}^{t_{k+1}} f` from three neighbouring samples.
fn interval_rule(f: &[Complex64], k: usize, h: f64) -> Complex64 {
    if k + 2 < f.len() {
        (f[k] * 5.0 + f[k + 1] * 8.0 - f[k + 2]) * (h / 12.0)
    } else {
        (-f[k - 1] + f[k] * 8.0 + f[k + 1] * 5.0) * (h / 12.0)
    }
}

fn picard_iterate(
    sys: &PerturbedSystem,
    j: usize,
    iterations: usize,
    certified: bool,
) -> Result<(Vec<[Complex64; 3]>, Vec<f64>)> {
    let n = sys.b.len();
    let h = sys.h();
    let rates = sys.rates();
    // G_i(t) = λ^{1/3}(μᵢ − μ₁)t + ∫ bᵢᵢ.
    let g: Vec<Vec<Complex64>> = (0..3)
        .map(|i| {
            let bii: Vec<Complex64> = sys.b.iter().map(|m| m[(i, i)]).collect();
            let int = cumulative(&bii, h);
            (0..n).map(|k| int[k] + c((rates[i] - rates[0]) * sys.t(k))).collect()
        })
        .collect();
    // Unperturbed column e^{λ^{1/3}(μⱼ−μ₁)t}δᵢⱼ.
    let mut cur: Vec<[Complex64; 3]> = (0..n)
        .map(|k| std::array::from_fn(|i| if i == j { c(((rates[j] - rates[0]) * sys.t(k)).exp()) } else { c(0.0) }))
        .collect();
    let mut distances = Vec::new();
    let mut growing = 0;
    for it in 0..iterations {
        let mut next = vec![[c(0.0); 3]; n];
        for i in 0..3 {
            // ĝᵢ(t) = δᵢⱼe^{Gᵢ(t)} + ∫_0^t e^{Gᵢ(t)−Gᵢ(s)} Σ_{k≠i} bᵢₖ(s)ĝₖ(s) ds
            let f: Vec<Complex64> =
                (0..n).map(|k| (0..3).filter(|m| *m != i).map(|m| sys.b[k][(i, m)] * cur[k][m]).sum()).collect();
            let mut acc = c(0.0);
            next[0][i] = if i == j { g[i][0].exp() } else { c(0.0) };
            for k in 0..n - 1 {
                let gk1 = g[i][k + 1];
                let w = |m: usize| (gk1 - g[i][m]).exp() * f[m];
                let local = if k + 2 < n {
                    (w(k) * 5.0 + w(k + 1) * 8.0 - w(k + 2)) * (h / 12.0)
                } else {
                    (-w(k - 1) + w(k) * 8.0 + w(k + 1) * 5.0) * (h / 12.0)
                };
                acc = acc * (gk1 - g[i][k]).exp() + local;
                next[k + 1][i] = acc + if i == j { gk1.exp() } else { c(0.0) };
            }
        }
        let d = cur.iter().zip(&next).flat_map(|(a, b)| (0..3).map(move |i| (a[i] - b[i]).norm())).fold(0.0, f64::max);
        if !d.is_finite() {
            return Err(Error::Divergence { iteration: it + 1, distance: d });
        }
        if let Some(prev) = distances.last() {
            if d > *prev && d > DISTANCE_FLOOR {
                growing += 1;
            } else {
                growing = 0;
            }
        }
        distances.push(d);
        cur = next;
        if !certified && growing >= 2 {
            return Err(Error::Divergence { iteration: it + 1, distance: d });
        }
        if d <= DISTANCE_FLOOR {
            break;
        }
    }
    Ok((cur, distances))
}

/// Iterate the Picard map for column `j` starting from the unperturbed column.
/// Fails with [`Error::NotCertified`] unless `e^{2RL}·2RL < 1` or `force`.
pub fn picard_fixed_point(sys: &PerturbedSystem, j: usize, iterations: usize, force: bool) -> Result<WeightedColumn> {
    if j > 2 {
        return Err(Error::invalid("column index must be 0, 1 or 2"));
    }
    let (factor, certified) = contraction_certificate(sys.r, sys.length)?;
    if !certified && !force {
        return Err(Error::NotCertified { factor });
    }
    let (values, distances) = picard_iterate(sys, j, iterations, certified)?;
    let quadrature_error = match sys.coarsened() {
        Ok(coarse) => {
            let (cv, _) = picard_iterate(&coarse, j, distances.len(), certified)?;
            let diff = cv
                .iter()
                .enumerate()
                .flat_map(|(k, a)| {
                    let b = values[2 * k];
                    (0..3).map(move |i| (a[i] - b[i]).norm())
                })
                .fold(0.0, f64::max);
            diff / 7.0
        }
        Err(_) => f64::NAN,
    };
    let norm = values.iter().flat_map(|v| v.iter().map(|x| x.norm())).fold(0.0, f64::max);
    let contraction_ok = distances.windows(2).all(|w| w[1] <= (1.1 * factor * w[0]).max(DISTANCE_FLOOR));
    Ok(WeightedColumn {
        column: j,
        intervals: sys.intervals(),
        values,
        norm,
        iterations: distances.len(),
        distances,
        factor,
        certified,
        contraction_ok,
        quadrature_error,
    })
}

/// Frame `V⁻¹DΦD⁻¹V` sampled along a transport, with its log scale.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSample {
    pub t: f64,
    pub phi: Mat3,
    pub log_scale: f64,
}

/// Transport `seg` with `intervals` RK4 steps and read off the diagonalised
/// system `B = V⁻¹(e^{iθ}P + e^{−iθ}Q)V − λ^{1/3}diag(μ)` and frame samples.
pub fn diagonalized_transport(
    field: &FrameField,
    seg: &GeodesicSegment,
    intervals: usize,
) -> Result<(PerturbedSystem, Vec<FrameSample>, FrameMatrix)> {
    let lambda = field.lambda();
    let mu = mu_roots(seg.theta);
    let v = diagonalizer(seg.theta);
    let vi = v.adjoint();
    let rates = mu.as_array().map(|m| lambda.cbrt() * m);
    let mut b = Vec::with_capacity(intervals + 1);
    let mut samples = Vec::with_capacity(intervals + 1);
    let fm = field.integrate(seg, intervals, |view| {
        let mut bm = vi * scale_frame(&view.coefficient, lambda) * v;
        for i in 0..3 {
            bm[(i, i)] -= c(rates[i]);
        }
        b.push(bm);
        samples.push(FrameSample { t: view.t, phi: vi * scale_frame(view.phi, lambda) * v, log_scale: view.log_scale });
    })?;
    let sys = PerturbedSystem::new(mu, lambda, seg.length, b)?;
    Ok((sys, samples, fm))
}

/// Weighted column growth of the diagonalised frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnGrowth {
    pub lambda: f64,
    /// Off-diagonal: `sup_k |φᵢⱼ|e^{−λ^{1/3}μⱼt_k}`; diagonal: `sup_k |φⱼⱼe^{−λ^{1/3}μⱼt_k} − 1|`.
    pub entries: [[f64; 3]; 3],
    /// `entries / λ^{−1/3}`.
    pub ratios: [[f64; 3]; 3],
    pub max_offdiag_ratio: f64,
    /// Same sups with the common weight `e^{−λ^{1/3}μ₁t}`.
    pub mu1_entries: [[f64; 3]; 3],
    pub max_offdiag_mu1_ratio: f64,
}

pub fn column_growth_check(samples: &[FrameSample], sys: &PerturbedSystem) -> Result<ColumnGrowth> {
    if samples.len() != sys.b.len() {
        return Err(Error::GridMismatch(format!("{} frame samples for {} system samples", samples.len(), sys.b.len())));
    }
    let rates = sys.rates();
    let mut entries = [[0.0f64; 3]; 3];
    let mut mu1_entries = [[0.0f64; 3]; 3];
    for s in samples {
        for i in 0..3 {
            for j in 0..3 {
                let p = s.phi[(i, j)];
                let w = if p.norm() == 0.0 { c(0.0) } else { (p.ln() + c(s.log_scale - rates[j] * s.t)).exp() };
                let w1 = if p.norm() == 0.0 { 0.0 } else { (p.norm().ln() + s.log_scale - rates[0] * s.t).exp() };
                let val = if i == j { (w - c(1.0)).norm() } else { w.norm() };
                entries[i][j] = entries[i][j].max(val);
                mu1_entries[i][j] = mu1_entries[i][j].max(if i == j { 0.0 } else { w1 });
            }
        }
    }
    let scale = sys.lambda.cbrt();
    let ratios = entries.map(|row| row.map(|v| v * scale));
    let off = |m: &[[f64; 3]; 3]| (0..3).flat_map(|i| (0..3).filter(move |j| *j != i).map(move |j| m[i][j])).fold(0.0, f64::max);
    Ok(ColumnGrowth {
        lambda: sys.lambda,
        entries,
        ratios,
        max_offdiag_ratio: off(&ratios),
        mu1_entries,
        max_offdiag_mu1_ratio: off(&mu1_entries) * scale,
    })
}

/// Ratios `ρᵢ = ξᵢe^{−λ^{1/3}μᵢL}` and the bracket flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BracketTable {
    pub rho: [f64; 3],
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub in_bracket: [bool; 3],
    /// `ρ₁ρ₂ρ₃`.
    pub product: f64,
    /// `|ρ₁ρ₂ρ₃ / det Φ − 1|`.
    pub identity_error: f64,
    pub unimodular: bool,
    pub double_root: bool,
    /// Eigenvalues were not all real positive; flags are informative only.
    pub report_only: bool,
    pub all_ok: bool,
}

pub fn eigenvalue_bracket(result: &HolonomyResult, slack: f64) -> BracketTable {
    let mu = mu_roots(result.theta);
    let rates = mu.as_array().map(|m| result.lambda.cbrt() * m * result.length);
    let lr: [f64; 3] = std::array::from_fn(|i| result.log_xi[i].re - rates[i]);
    let rho = lr.map(f64::exp);
    let (e, e2) = (slack, slack);
    let lower = [1.0 / 3.0 - e, 1.0 / 9.0 - e2, 1.0 / ((3.0 + e) * (9.0 + e2))];
    let upper = [3.0 + e, 9.0 + e2, 1.0 / ((1.0 / 3.0 - e) * (1.0 / 9.0 - e2))];
    let mut in_bracket: [bool; 3] = std::array::from_fn(|i| rho[i] >= lower[i] && rho[i] <= upper[i]);
    let double_root = mu.has_double_root(1e-9);
    if double_root {
        // The sorted pair is unstable: check its sum and product jointly.
        let (a, b) = if mu.mu1 - mu.mu2 <= 1e-9 { (0, 1) } else { (1, 2) };
        let sum = 0.5 * (rho[a] + rho[b]);
        let prod = rho[a] * rho[b];
        let ok = sum >= lower[a].min(lower[b])
            && sum <= upper[a].max(upper[b])
            && prod >= lower[a] * lower[b]
            && prod <= upper[a] * upper[b];
        in_bracket[a] = ok;
        in_bracket[b] = ok;
    }
    let log_product: f64 = lr.iter().sum();
    let identity_error = (log_product - result.log_det).exp_m1().abs();
    let unimodular = log_product.abs() <= 1e-6;
    let report_only = !result.real_positive;
    BracketTable {
        rho,
        lower,
        upper,
        in_bracket,
        product: log_product.exp(),
        identity_error,
        unimodular,
        double_root,
        report_only,
        all_ok: in_bracket.iter().all(|b| *b),
    }
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `dev1 = |tr Φ / Σe^{λ^{1/3}μᵢL} − 1|`, `dev2` likewise for the second
/// elementary symmetric function, evaluated in log space.
pub fn char_poly_compare(frame: &FrameMatrix, lambda: f64, theta: f64, length: f64) -> (f64, f64) {
    let mu = mu_roots(theta).as_array();
    let s = lambda.cbrt() * length;
    let p1 = log_sum_exp(&mu.map(|m| s * m));
    let p2 = log_sum_exp(&[s * (mu[0] + mu[1]), s * (mu[0] + mu[2]), s * (mu[1] + mu[2])]);
    let (l1, l2) = frame.log_symmetric_functions();
    let dev = |l: Complex64, p: f64| {
        if l.re.is_finite() {
            ((l - c(p)).exp() - c(1.0)).norm()
        } else {
            1.0
        }
    };
    (dev(l1, p1), dev(l2, p2))
}

/// One row of the asymptotics sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub theta: f64,
    #[serde(rename = "L")]
    pub length: f64,
    pub rho: [f64; 3],
    pub dev1: f64,
    pub dev2: f64,
    pub offdiag_sup_ratio: f64,
    pub certified: bool,
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("lambda,theta,L,rho1,rho2,rho3,dev1,dev2,offdiag_sup_ratio,certified\n");
    for r in rows {
        let f: Vec<String> = [r.lambda, r.theta, r.length, r.rho[0], r.rho[1], r.rho[2], r.dev1, r.dev2, r.offdiag_sup_ratio]
            .iter()
            .map(|v| fmt_f64(*v))
            .collect();
        s.push_str(&f.join(","));
        s.push_str(&format!(",{}\n", r.certified));
    }
    s
}

/// Everything measured on one segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub holonomy: HolonomyResult,
    pub bracket: BracketTable,
    pub growth: ColumnGrowth,
    pub dev1: f64,
    pub dev2: f64,
    /// `sup |bᵢⱼ|` and `R·λ^{1/3}`.
    pub r: f64,
    pub r_scaled: f64,
    pub factor: f64,
    pub certified: bool,
    /// Weighted sup-difference between the Picard fixed point of column 0 and
    /// the transported frame, relative to its norm (when certified).
    pub picard_vs_transport: Option<f64>,
}

impl SegmentReport {
    pub fn sweep_row(&self) -> SweepRow {
        SweepRow {
            lambda: self.holonomy.lambda,
            theta: self.holonomy.theta,
            length: self.holonomy.length,
            rho: self.bracket.rho,
            dev1: self.dev1,
            dev2: self.dev2,
            offdiag_sup_ratio: self.growth.max_offdiag_ratio,
            certified: self.certified,
        }
    }
}

/// Transport steps for a segment report: at least [`PICARD_SAMPLES`] and four
/// times [`default_steps`](crate::frame::default_steps), a multiple of 4.
pub fn segment_intervals(lambda: f64, length: f64) -> usize {
    let n = PICARD_SAMPLES.max(4 * crate::frame::default_steps(lambda, length));
    n.div_ceil(4) * 4
}

pub fn segment_report(field: &FrameField, seg: &GeodesicSegment, intervals: usize) -> Result<SegmentReport> {
    let fm = field.transport(seg, intervals)?;
    let holonomy = crate::frame::holonomy_from_frame(&fm);
    let (sys, samples, _) = diagonalized_transport(field, seg, intervals)?;
    let growth = column_growth_check(&samples, &sys)?;
    let (dev1, dev2) = char_poly_compare(&fm, holonomy.lambda, seg.theta, seg.length);
    let (factor, certified) = contraction_certificate(sys.r, sys.length)?;
    let picard_vs_transport = if certified {
        let col = picard_fixed_point(&sys, 0, 60, false)?;
        let rate = sys.rates()[0];
        let diff = samples
            .iter()
            .zip(&col.values)
            .flat_map(|(s, g)| {
                let w = (s.log_scale - rate * s.t).exp();
                (0..3).map(move |i| (s.phi[(i, 0)] * w - g[i]).norm())
            })
            .fold(0.0, f64::max);
        Some(diff / col.norm)
    } else {
        None
    };
    Ok(SegmentReport {
        bracket: eigenvalue_bracket(&holonomy, BRACKET_SLACK),
        holonomy,
        growth,
        dev1,
        dev2,
        r: sys.r,
        r_scaled: sys.r * sys.lambda.cbrt(),
        factor,
        certified,
        picard_vs_transport,
    })
}
