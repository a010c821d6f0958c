//! Roots of the two cubics that govern the asymptotics: the spectral cubic
//! `μ³ − 3μ − 2cos 3θ` and the supersolution cubic `x³ − σx² − λ²`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residual bound every returned spectral root must meet.
pub const MU_RESIDUAL_TOL: f64 = 1e-12;

/// Roots of `μ³ − 3μ − 2cos 3θ = 0`, sorted `mu1 ≥ mu2 ≥ mu3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuTriple {
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub theta: f64,
}

impl MuTriple {
    pub fn as_array(&self) -> [f64; 3] {
        [self.mu1, self.mu2, self.mu3]
    }

    pub fn sum(&self) -> f64 {
        self.mu1 + self.mu2 + self.mu3
    }

    /// `|μ³ − 3μ − 2cos 3θ|` for each root.
    pub fn residuals(&self) -> [f64; 3] {
        let c = 2.0 * (3.0 * self.theta).cos();
        self.as_array().map(|m| (m * m * m - 3.0 * m - c).abs())
    }

    /// True when two roots coincide (θ a multiple of π/3).
    pub fn has_double_root(&self, tol: f64) -> bool {
        self.mu1 - self.mu2 <= tol || self.mu2 - self.mu3 <= tol
    }
}

/// The three real roots of `μ³ − 3μ − 2cos 3θ`.
///
/// Substituting `μ = 2cos φ` turns the cubic into `cos 3φ = cos 3θ`, so the roots
/// are `2cos(θ − 2πk/3)`. Near-coincident roots are returned as an exactly
/// repeated pair, `−μ_single/2`, which keeps the sum exactly zero.
pub fn mu_roots(theta: f64) -> MuTriple {
    let mut mu = [0.0f64; 3];
    for (k, m) in mu.iter_mut().enumerate() {
        *m = 2.0 * (theta - 2.0 * PI * k as f64 / 3.0).cos();
    }
    mu.sort_by(|a, b| b.total_cmp(a));

    let c = 2.0 * (3.0 * theta).cos();
    for m in mu.iter_mut() {
        // One Newton polish; a no-op unless rounding left a visible residual.
        let p = *m * *m * *m - 3.0 * *m - c;
        let dp = 3.0 * *m * *m - 3.0;
        if p.abs() > MU_RESIDUAL_TOL && dp.abs() > 1e-6 {
            *m -= p / dp;
        }
    }

    const SNAP: f64 = 1e-13;
    if mu[0] - mu[1] <= SNAP {
        let pair = -mu[2] / 2.0;
        mu[0] = pair;
        mu[1] = pair;
    } else if mu[1] - mu[2] <= SNAP {
        let pair = -mu[0] / 2.0;
        mu[1] = pair;
        mu[2] = pair;
    }

    MuTriple { mu1: mu[0], mu2: mu[1], mu3: mu[2], theta }
}

/// Positive root of `p(x) = x³ − σx² − λ²`, the constant supersolution level `e^S`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupersolutionRoot {
    pub sigma: f64,
    pub lambda: f64,
    pub r: f64,
}

impl SupersolutionRoot {
    pub fn p(&self, x: f64) -> f64 {
        x * x * (x - self.sigma) - self.lambda * self.lambda
    }

    /// `|p(r)| / λ²`.
    pub fn relative_residual(&self) -> f64 {
        self.p(self.r).abs() / (self.lambda * self.lambda)
    }

    /// `S = log r`.
    pub fn log_r(&self) -> f64 {
        self.r.ln()
    }
}

/// Unique positive root of `x³ − σx² − λ²` by safeguarded Newton on the bracket
/// `[max(σ, λ^{2/3}), σ + λ^{2/3} + 1]`.
pub fn supersolution_root(sigma: f64, lambda: f64) -> Result<SupersolutionRoot> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be finite and ≥ 0, got {sigma}")));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be finite and > 0, got {lambda}")));
    }
    let l2 = lambda * lambda;
    let p = |x: f64| x * x * (x - sigma) - l2;
    let dp = |x: f64| x * (3.0 * x - 2.0 * sigma);

    let a23 = lambda.powf(2.0 / 3.0);
    let mut lo = sigma.max(a23);
    let mut hi = sigma + a23 + 1.0;
    debug_assert!(p(hi) > 0.0);
    // p(λ^{2/3}) = −σλ^{4/3} can round to a tiny positive value when σ ≈ 0
    if p(lo) >= 0.0 {
        return Ok(SupersolutionRoot { sigma, lambda, r: lo });
    }

    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = p(x);
        if fx == 0.0 {
            break;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = dp(x);
        let newton = x - fx / d;
        let next = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs() {
            x = next;
            break;
        }
        x = next;
    }
    // Pick the better of x and its neighbours in the last bracket.
    let r = [x, lo, hi].into_iter().min_by(|a, b| p(*a).abs().total_cmp(&p(*b).abs())).unwrap_or(x);
    Ok(SupersolutionRoot { sigma, lambda, r })
}

/// Ordered log-eigenvalue triple `ℓ₁ ≥ ℓ₂ ≥ ℓ₃`, normalised to sum to zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralTriple(pub [f64; 3]);

impl SpectralTriple {
    /// Sorts descending and subtracts the mean, projecting onto `ℓ₁ + ℓ₂ + ℓ₃ = 0`.
    pub fn normalized(mut raw: [f64; 3]) -> Self {
        raw.sort_by(|a, b| b.total_cmp(a));
        let mean = (raw[0] + raw[1] + raw[2]) / 3.0;
        SpectralTriple(raw.map(|l| l - mean))
    }

    pub fn values(&self) -> [f64; 3] {
        self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &SpectralTriple) -> f64 {
        (0..3).map(|i| (self.0[i] - other.0[i]).abs()).fold(0.0, f64::max)
    }
}

/// `(λ^{1/3}μ₁L, λ^{1/3}μ₂L, λ^{1/3}μ₃L)`.
pub fn predicted_log_spectrum(lambda: f64, theta: f64, length: f64) -> SpectralTriple {
    let mu = mu_roots(theta);
    let scale = lambda.cbrt() * length;
    SpectralTriple(mu.as_array().map(|m| scale * m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn mu_roots_at_special_angles() {
        let m = mu_roots(0.0);
        assert_eq!(m.as_array(), [2.0, -1.0, -1.0]);

        let m = mu_roots(PI / 6.0);
        let s3 = 3f64.sqrt();
        assert!(close(m.mu1, s3, 1e-14) && close(m.mu2, 0.0, 1e-14) && close(m.mu3, -s3, 1e-14));

        let m = mu_roots(PI / 3.0);
        assert!(close(m.mu1, 1.0, 1e-15) && m.mu1 == m.mu2 && close(m.mu3, -2.0, 1e-15));
    }

    #[test]
    fn mu_roots_pi_over_12() {
        let m = mu_roots(PI / 12.0);
        assert!(close(m.mu1, 1.931852, 1e-6));
        assert!(close(m.mu2, -0.517638, 1e-6));
        assert!(close(m.mu3, -std::f64::consts::SQRT_2, 1e-12));
        assert!(m.residuals().iter().all(|r| *r < MU_RESIDUAL_TOL));
    }

    #[test]
    fn supersolution_trivial_examples() {
        for (s, l, r) in [(1.0, 10.0, 5.0), (0.0, 1.0, 1.0), (3.0, 4.0, 4.0)] {
            let root = supersolution_root(s, l).unwrap();
            assert!(close(root.r, r, 1e-12), "σ={s} λ={l}: {}", root.r);
            assert!(root.relative_residual() < 1e-12);
            assert!(root.r > s);
        }
    }

    #[test]
    fn supersolution_rejects_bad_parameters() {
        assert!(matches!(supersolution_root(-1.0, 1.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(supersolution_root(0.0, 0.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(supersolution_root(0.0, -2.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn predicted_spectrum_examples() {
        assert_eq!(predicted_log_spectrum(1.0, 0.0, 1.0).values(), [2.0, -1.0, -1.0]);
        assert_eq!(predicted_log_spectrum(8.0, 0.0, 1.0).values(), [4.0, -2.0, -2.0]);
        let p = predicted_log_spectrum(1.0, PI / 6.0, 2.0).values();
        let s3 = 3f64.sqrt();
        assert!(close(p[0], 2.0 * s3, 1e-13) && close(p[1], 0.0, 1e-13) && close(p[2], -2.0 * s3, 1e-13));
    }

    #[test]
    fn normalized_triple_sums_to_zero() {
        let t = SpectralTriple::normalized([1.0, 5.0, -0.5]);
        assert!(t.sum().abs() < 1e-15);
        assert!(t.0[0] >= t.0[1] && t.0[1] >= t.0[2]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn roots_are_valid(theta in -20.0f64..20.0) {
                let m = mu_roots(theta);
                prop_assert!(m.mu1 >= m.mu2 && m.mu2 >= m.mu3);
                prop_assert!(m.sum().abs() <= 1e-12);
                prop_assert!(m.residuals().iter().all(|r| *r <= MU_RESIDUAL_TOL));
                prop_assert!(m.as_array().iter().all(|x| x.abs() <= 2.0 + 1e-15));
            }

            #[test]
            fn roots_symmetric_in_theta(theta in -10.0f64..10.0) {
                let a = mu_roots(theta).as_array();
                let b = mu_roots(theta + 2.0 * PI / 3.0).as_array();
                let c = mu_roots(-theta).as_array();
                for i in 0..3 {
                    prop_assert!((a[i] - b[i]).abs() < 1e-12);
                    prop_assert!((a[i] - c[i]).abs() < 1e-12);
                }
            }

            #[test]
            fn supersolution_asymptotics(sigma in 0.0f64..5.0, e in 0.0f64..3.0) {
                let lambda = (10.0 * sigma).max(1.0).powi(3) * 10f64.powf(e);
                let root = supersolution_root(sigma, lambda).unwrap();
                prop_assert!(root.relative_residual() < 1e-10);
                let eps = sigma * lambda.powf(-2.0 / 3.0);
                prop_assert!((lambda.powf(-2.0 / 3.0) * root.r - 1.0).abs() <= 2.0 * eps + 1e-14);
            }

            #[test]
            fn prediction_scales(lambda in 0.01f64..1e6, theta in -4.0f64..4.0, len in 0.01f64..10.0) {
                let p = predicted_log_spectrum(lambda, theta, len).values();
                let q = predicted_log_spectrum(lambda, theta, 2.0 * len).values();
                let r = predicted_log_spectrum(8.0 * lambda, theta, len).values();
                for i in 0..3 {
                    prop_assert!((q[i] - 2.0 * p[i]).abs() <= 1e-12 * (1.0 + p[i].abs()));
                    prop_assert!((r[i] - 2.0 * p[i]).abs() <= 1e-10 * (1.0 + p[i].abs()));
                }
            }
        }
    }
}
