//! Structure equations of the affine sphere and frame transport along flat
//! geodesics.
//!
//! Segments are integrated in the flat chart `w` of `U₀` (where `U₀ = 2dw³`,
//! so `U = 2λ dw³`). The conformal factor is carried as `v = ψ − s`, which is
//! smooth across the grid, and converted with
//! `ψ_w = log(2λ^{2/3}) + v`, `∂_wψ_w = ∂_z v · (U₀/2)^{−1/3}`.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cubic::{mu_roots, predicted_log_spectrum, SpectralTriple};
use crate::eigen::{dominant_eigenvalue, is_real_positive};
use crate::error::{Error, Result};
use crate::field::{nearest_cube_root, principal_cube_root, CubicDifferential, FieldGradient, GeodesicSegment, ScalarField};
use crate::wang::subsolution_value;

pub type Mat3 = Matrix3<Complex64>;

/// Above this value of `λ^{1/3}μ₁L` the frame is integrated with the
/// exponential rate `λ^{1/3}μ₁` removed.
pub const SHIFT_THRESHOLD: f64 = 200.0;
/// Relative disagreement between `n` and `n/2` steps that triggers
/// [`Error::StepsTooFew`].
pub const HALVING_TOL: f64 = 1e-6;
const RENORMALIZE: f64 = 1e64;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn fro(m: &Mat3) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// `A_z`, `A_z̄` for the frame `(f, f_z, f_z̄)` and their scaled versions
/// `P = DA_zD⁻¹`, `Q = DA_z̄D⁻¹`, `D = diag(1, λ^{−1/3}, λ^{−1/3})`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StructureMatrices {
    pub a_z: Mat3,
    pub a_zbar: Mat3,
    pub p: Mat3,
    pub q: Mat3,
    pub lambda: f64,
}

impl StructureMatrices {
    /// `u_val` is the full coefficient `λU₀` in the chart of `psi`.
    pub fn new(psi: f64, psi_z: Complex64, u_val: Complex64, lambda: f64) -> Self {
        let (a_z, a_zbar) = unscaled(psi, psi_z, u_val);
        Self { a_z, a_zbar, p: scale_frame(&a_z, lambda), q: scale_frame(&a_zbar, lambda), lambda }
    }

    /// `e^{iθ}A_z + e^{−iθ}A_z̄`.
    pub fn coefficient(&self, theta: f64) -> Mat3 {
        let e = Complex64::from_polar(1.0, theta);
        self.a_z * e + self.a_zbar * e.conj()
    }

    /// `e^{iθ}P + e^{−iθ}Q`.
    pub fn scaled_coefficient(&self, theta: f64) -> Mat3 {
        let e = Complex64::from_polar(1.0, theta);
        self.p * e + self.q * e.conj()
    }
}

fn unscaled(psi: f64, psi_z: Complex64, u_val: Complex64) -> (Mat3, Mat3) {
    let o = c(0.0, 0.0);
    let l = c(1.0, 0.0);
    let half = c(0.5 * psi.exp(), 0.0);
    let ue = u_val * (-psi).exp();
    let a_z = Mat3::new(o, l, o, o, psi_z, ue, half, o, o);
    let a_zbar = Mat3::new(o, o, l, half, o, o, o, ue.conj(), psi_z.conj());
    (a_z, a_zbar)
}

/// `D m D⁻¹` with `D = diag(1, λ^{−1/3}, λ^{−1/3})`.
pub fn scale_frame(m: &Mat3, lambda: f64) -> Mat3 {
    let d = Vector3::new(1.0, lambda.cbrt().recip(), lambda.cbrt().recip());
    Mat3::from_fn(|i, j| m[(i, j)] * (d[i] / d[j]))
}

/// Fundamental solution at the end of a segment, stored with log scales so
/// that no entry overflows: `Φ = phi · e^{log_scale}` and likewise for the
/// cofactor matrix `cof Φ = det Φ · Φ^{−T}` and the inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMatrix {
    pub phi: Mat3,
    pub log_scale: f64,
    pub cofactor: Mat3,
    pub cofactor_log_scale: f64,
    pub inverse: Mat3,
    pub inverse_log_scale: f64,
    /// `∫ tr(e^{iθ}A_w + e^{−iθ}A_w̄) dt`.
    pub log_det: f64,
    pub lambda: f64,
    pub theta: f64,
    pub length: f64,
    pub steps: usize,
    pub z_end: Complex64,
    /// `ψ_w(end) − ψ_w(start)`.
    pub delta_psi: f64,
}

impl FrameMatrix {
    /// Scaled frame `DΦD⁻¹`, without the factor `e^{log_scale}`.
    pub fn scaled(&self) -> Mat3 {
        scale_frame(&self.phi, self.lambda)
    }

    /// `Φ` itself; entries may be infinite for large exponents.
    pub fn unscaled_value(&self) -> Mat3 {
        self.phi * c(self.log_scale.exp(), 0.0)
    }

    /// Complex logs of `ξ₁`, `ξ₁ξ₂` and `ξ₃`, read from `Φ`, `cof Φ` and `Φ⁻¹`.
    fn log_eigen_parts(&self) -> (Complex64, Complex64, Complex64) {
        let l1 = dominant_eigenvalue(&self.phi).ln() + self.log_scale;
        let l12 = dominant_eigenvalue(&self.cofactor).ln() + self.cofactor_log_scale;
        let l3 = -(dominant_eigenvalue(&self.inverse).ln() + self.inverse_log_scale);
        (l1, l12, l3)
    }

    /// `log ξᵢ`, sorted by modulus descending.
    pub fn log_eigenvalues(&self) -> [Complex64; 3] {
        let (l1, l12, l3) = self.log_eigen_parts();
        let mut l = [l1, l12 - l1, l3];
        l.sort_by(|a, b| b.re.total_cmp(&a.re));
        l
    }

    /// `log` of the trace and of the second elementary symmetric function of `Φ`.
    pub fn log_symmetric_functions(&self) -> (Complex64, Complex64) {
        (self.phi.trace().ln() + self.log_scale, self.cofactor.trace().ln() + self.cofactor_log_scale)
    }
}

/// Holonomy eigen-data of one transport.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolonomyResult {
    pub lambda: f64,
    pub theta: f64,
    #[serde(rename = "L")]
    pub length: f64,
    /// `ξᵢ`; `None` when some `ξᵢ` overflows.
    pub xi: Option<[Complex64; 3]>,
    pub log_xi: [Complex64; 3],
    pub log_spectrum: SpectralTriple,
    pub predicted: SpectralTriple,
    /// `max(|det Φ·e^{−Δψ} − 1|)` over the two determinant routes (inverse and
    /// cofactor transports, and the trace integral).
    pub det_drift: f64,
    /// `log det Φ = ∫ tr`.
    pub log_det: f64,
    pub real_positive: bool,
}

/// Evaluates the structure matrices of a solved field along paths.
pub struct FrameField<'a> {
    u: &'a CubicDifferential,
    v: ScalarField,
    grad: FieldGradient,
    zeros: Vec<Complex64>,
    c0: f64,
}

/// What the integrator reports at step boundaries.
pub struct StepView<'a> {
    pub step: usize,
    pub t: f64,
    pub z: Complex64,
    /// Unscaled coefficient `e^{iθ}A_w + e^{−iθ}A_w̄` at `z(t)`.
    pub coefficient: Mat3,
    /// `Φ(t)·e^{−log_scale}`.
    pub phi: &'a Mat3,
    pub log_scale: f64,
}

struct State {
    z: Complex64,
    phi: Mat3,
    cof: Mat3,
    inv: Mat3,
    ld: f64,
}

impl<'a> FrameField<'a> {
    pub fn new(psi: &ScalarField, u: &'a CubicDifferential) -> Self {
        let values = psi.values.iter().zip(psi.grid.nodes()).map(|(p, (_, _, z))| p - subsolution_value(u, z)).collect();
        let v = ScalarField { grid: psi.grid, values };
        let grad = v.gradient();
        let c0 = std::f64::consts::LN_2 + (2.0 / 3.0) * u.lambda().ln();
        Self { u, v, grad, zeros: u.zeros(), c0 }
    }

    pub fn lambda(&self) -> f64 {
        self.u.lambda()
    }

    fn check_clearance(&self, z: Complex64, clearance: f64) -> Result<()> {
        for r in &self.zeros {
            if (z - r).norm() < clearance {
                return Err(Error::SingularPoint { z, detail: format!("within clearance {clearance:e} of a zero") });
            }
        }
        Ok(())
    }

    /// `(ψ_w, ∂_wψ_w, β)` at `z`, with `β = (U₀/2)^{1/3}` the root nearest `beta_ref`.
    pub fn flat_chart(&self, z: Complex64, beta_ref: Complex64) -> Result<(f64, Complex64, Complex64)> {
        let beta = nearest_cube_root(self.u.eval_u0(z) / 2.0, beta_ref);
        let v = self.v.interpolate(z)?;
        let vz = self.grad.complex_derivative(z)?;
        Ok((self.c0 + v, vz / beta, beta))
    }

    /// Structure matrices in the flat chart at `z`.
    pub fn flat_matrices(&self, z: Complex64, beta_ref: Complex64) -> Result<(StructureMatrices, Complex64)> {
        let (psi_w, psi_ww, beta) = self.flat_chart(z, beta_ref)?;
        Ok((StructureMatrices::new(psi_w, psi_ww, c(2.0 * self.lambda(), 0.0), self.lambda()), beta))
    }

    /// Structure matrices in the original `z`-chart.
    pub fn chart_matrices(&self, z: Complex64) -> Result<StructureMatrices> {
        let s = subsolution_value(self.u, z);
        let psi = s + self.v.interpolate(z)?;
        let psi_z = self.grad.complex_derivative(z)? + self.u.flat_metric_factor_z(z);
        Ok(StructureMatrices::new(psi, psi_z, self.u.eval(z), self.lambda()))
    }

    /// RK4 along the flat geodesic, calling `observe` at every step boundary.
    pub fn integrate(&self, seg: &GeodesicSegment, steps: usize, mut observe: impl FnMut(&StepView)) -> Result<FrameMatrix> {
        if steps == 0 {
            return Err(Error::invalid("steps must be ≥ 1"));
        }
        let lambda = self.lambda();
        let mu1 = mu_roots(seg.theta).mu1;
        let rate = lambda.cbrt() * mu1;
        let shift = if rate * seg.length > SHIFT_THRESHOLD { rate } else { 0.0 };
        let e = Complex64::from_polar(1.0, seg.theta);
        let h = seg.length / steps as f64;
        let id = Mat3::identity();

        self.check_clearance(seg.start, seg.clearance)?;
        let beta0 = principal_cube_root(self.u.eval_u0(seg.start) / 2.0);
        let psi_w0 = self.flat_chart(seg.start, beta0)?.0;

        let deriv = |st: &State, beta_ref: Complex64| -> Result<(Complex64, Mat3, Mat3, Mat3, f64, Complex64)> {
            let (m, beta) = self.flat_matrices(st.z, beta_ref)?;
            let k = m.coefficient(seg.theta);
            let tr = k.trace();
            let dphi = (k - id * c(shift, 0.0)) * st.phi;
            let dcof = (id * tr - k.transpose()) * st.cof;
            let dinv = -(st.inv * k);
            Ok((e / beta, dphi, dcof, dinv, tr.re, beta))
        };
        let add = |st: &State, d: &(Complex64, Mat3, Mat3, Mat3, f64, Complex64), w: f64| State {
            z: st.z + d.0 * w,
            phi: st.phi + d.1 * c(w, 0.0),
            cof: st.cof + d.2 * c(w, 0.0),
            inv: st.inv + d.3 * c(w, 0.0),
            ld: st.ld + d.4 * w,
        };

        let mut st = State { z: seg.start, phi: id, cof: id, inv: id, ld: 0.0 };
        let (mut s_phi, mut s_cof, mut s_inv) = (0.0, 0.0, 0.0);
        let mut beta = beta0;
        {
            let (m, _) = self.flat_matrices(st.z, beta)?;
            observe(&StepView { step: 0, t: 0.0, z: st.z, coefficient: m.coefficient(seg.theta), phi: &st.phi, log_scale: 0.0 });
        }
        for step in 1..=steps {
            let k1 = deriv(&st, beta)?;
            let k2 = deriv(&add(&st, &k1, 0.5 * h), beta)?;
            let k3 = deriv(&add(&st, &k2, 0.5 * h), beta)?;
            let k4 = deriv(&add(&st, &k3, h), beta)?;
            let w = h / 6.0;
            let cw = c(w, 0.0);
            st.z += (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * w;
            st.phi += (k1.1 + k2.1 * c(2.0, 0.0) + k3.1 * c(2.0, 0.0) + k4.1) * cw;
            st.cof += (k1.2 + k2.2 * c(2.0, 0.0) + k3.2 * c(2.0, 0.0) + k4.2) * cw;
            st.inv += (k1.3 + k2.3 * c(2.0, 0.0) + k3.3 * c(2.0, 0.0) + k4.3) * cw;
            st.ld += (k1.4 + 2.0 * k2.4 + 2.0 * k3.4 + k4.4) * w;
            self.check_clearance(st.z, seg.clearance)?;
            for (m, s) in [(&mut st.phi, &mut s_phi), (&mut st.cof, &mut s_cof), (&mut st.inv, &mut s_inv)] {
                let n = fro(m);
                if !n.is_finite() {
                    return Err(Error::invalid("frame overflow during transport"));
                }
                if n > RENORMALIZE || n < RENORMALIZE.recip() {
                    *m = m.unscale(n);
                    *s += n.ln();
                }
            }
            let (m, b) = self.flat_matrices(st.z, beta)?;
            beta = b;
            let t = step as f64 * h;
            observe(&StepView {
                step,
                t,
                z: st.z,
                coefficient: m.coefficient(seg.theta),
                phi: &st.phi,
                log_scale: s_phi + shift * t,
            });
        }
        let psi_w1 = self.flat_chart(st.z, beta)?.0;
        Ok(FrameMatrix {
            phi: st.phi,
            log_scale: s_phi + shift * seg.length,
            cofactor: st.cof,
            cofactor_log_scale: s_cof,
            inverse: st.inv,
            inverse_log_scale: s_inv,
            log_det: st.ld,
            lambda,
            theta: seg.theta,
            length: seg.length,
            steps,
            z_end: st.z,
            delta_psi: psi_w1 - psi_w0,
        })
    }

    /// [`Self::integrate`] with the halving-step check.
    pub fn transport(&self, seg: &GeodesicSegment, steps: usize) -> Result<FrameMatrix> {
        let full = self.integrate(seg, steps, |_| {})?;
        if seg.length == 0.0 || steps < 2 {
            return Ok(full);
        }
        let half = self.integrate(seg, steps / 2, |_| {})?;
        let rel = |a: &Mat3, sa: f64, b: &Mat3, sb: f64| fro(&(a - b * c((sb - sa).exp(), 0.0))) / fro(a);
        let disagreement = rel(&full.phi, full.log_scale, &half.phi, half.log_scale)
            .max(rel(&full.cofactor, full.cofactor_log_scale, &half.cofactor, half.cofactor_log_scale))
            .max(rel(&full.inverse, full.inverse_log_scale, &half.inverse, half.inverse_log_scale));
        if !(disagreement <= HALVING_TOL) {
            return Err(Error::StepsTooFew { disagreement });
        }
        Ok(full)
    }

    pub fn holonomy(&self, seg: &GeodesicSegment, steps: usize) -> Result<HolonomyResult> {
        let fm = self.transport(seg, steps)?;
        Ok(holonomy_from_frame(&fm))
    }

    /// Transport along a polyline in the `z`-chart (no flat-chart conversion).
    pub fn transport_polyline(&self, path: &[Complex64], steps_per_unit: usize, clearance: f64) -> Result<Mat3> {
        if path.len() < 2 {
            return Err(Error::invalid("path needs at least two points"));
        }
        let mut phi = Mat3::identity();
        for edge in path.windows(2) {
            let (a, b) = (edge[0], edge[1]);
            let d = b - a;
            let n = ((d.norm() * steps_per_unit as f64).ceil() as usize).max(1);
            let h = 1.0 / n as f64;
            let k = |s: f64| -> Result<Mat3> {
                let z = a + d * s;
                self.check_clearance(z, clearance)?;
                let m = self.chart_matrices(z)?;
                Ok(m.a_z * d + m.a_zbar * d.conj())
            };
            for i in 0..n {
                let s = i as f64 * h;
                let k1 = k(s)? * phi;
                let k2 = k(s + 0.5 * h)? * (phi + k1 * c(0.5 * h, 0.0));
                let k3 = k(s + 0.5 * h)? * (phi + k2 * c(0.5 * h, 0.0));
                let k4 = k(s + h)? * (phi + k3 * c(h, 0.0));
                phi += (k1 + k2 * c(2.0, 0.0) + k3 * c(2.0, 0.0) + k4) * c(h / 6.0, 0.0);
            }
        }
        Ok(phi)
    }
}

pub fn holonomy_from_frame(fm: &FrameMatrix) -> HolonomyResult {
    let log_xi = fm.log_eigenvalues();
    let re = [log_xi[0].re, log_xi[1].re, log_xi[2].re];
    let log_spectrum = SpectralTriple::normalized(re);
    let predicted = predicted_log_spectrum(fm.lambda, fm.theta, fm.length);
    let sum: Complex64 = log_xi.iter().sum();
    let drift_frames = (sum.re - fm.delta_psi).exp_m1().abs();
    let drift_trace = (fm.log_det - fm.delta_psi).exp_m1().abs();
    let xi = log_xi.map(|l| l.exp());
    let xi = xi.iter().all(|x| x.re.is_finite() && x.im.is_finite()).then_some(xi);
    HolonomyResult {
        lambda: fm.lambda,
        theta: fm.theta,
        length: fm.length,
        xi,
        log_xi,
        log_spectrum,
        predicted,
        det_drift: drift_frames.max(drift_trace),
        log_det: fm.log_det,
        real_positive: log_xi.iter().all(|l| is_real_positive(*l)),
    }
}

/// Steps used when the caller does not choose: RK4 error stays near `10⁻¹¹`
/// relative for growth rates up to `2λ^{1/3}`.
pub fn default_steps(lambda: f64, length: f64) -> usize {
    let n = (800.0 * lambda.cbrt() * length).ceil() as usize;
    (n.max(512) + 1) & !1
}

pub fn structure_matrices(psi: f64, psi_z: Complex64, u_val: Complex64, lambda: f64) -> StructureMatrices {
    StructureMatrices::new(psi, psi_z, u_val, lambda)
}

pub fn transport(psi: &ScalarField, u: &CubicDifferential, seg: &GeodesicSegment, steps: usize) -> Result<FrameMatrix> {
    FrameField::new(psi, u).transport(seg, steps)
}

pub fn holonomy(psi: &ScalarField, u: &CubicDifferential, seg: &GeodesicSegment, steps: usize) -> Result<HolonomyResult> {
    FrameField::new(psi, u).holonomy(seg, steps)
}

/// `‖Φ₁ − Φ₂‖/‖Φ₁‖` for two polylines with common endpoints.
pub fn path_independence_residual(
    psi: &ScalarField,
    u: &CubicDifferential,
    path1: &[Complex64],
    path2: &[Complex64],
    steps_per_unit: usize,
) -> Result<f64> {
    let ends = |p: &[Complex64]| (p[0], p[p.len() - 1]);
    if path1.len() < 2 || path2.len() < 2 {
        return Err(Error::invalid("paths need at least two points"));
    }
    let ((a1, b1), (a2, b2)) = (ends(path1), ends(path2));
    if (a1 - a2).norm() > 1e-12 || (b1 - b2).norm() > 1e-12 {
        return Err(Error::invalid("paths must share their endpoints"));
    }
    let field = FrameField::new(psi, u);
    let clearance = psi.grid.default_clearance();
    let p1 = field.transport_polyline(path1, steps_per_unit, clearance)?;
    let p2 = field.transport_polyline(path2, steps_per_unit, clearance)?;
    Ok(fro(&(p1 - p2)) / fro(&p1))
}
