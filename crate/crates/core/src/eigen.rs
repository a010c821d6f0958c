//! Eigenvalues of complex 3×3 matrices.

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::field::polynomial_roots;

type Mat3 = Matrix3<Complex64>;

/// Coefficients `[c0, c1, c2, 1]` of `det(xI − m)`, lowest degree first.
pub fn char_poly(m: &Mat3) -> [Complex64; 4] {
    let tr = m.trace();
    let minors = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    [-m.determinant(), minors, -tr, Complex64::new(1.0, 0.0)]
}

/// All three eigenvalues by complex Schur decomposition, sorted by modulus
/// descending.
pub fn eigenvalues(m: &Mat3) -> [Complex64; 3] {
    let scale = m.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return [Complex64::new(0.0, 0.0); 3];
    }
    let scaled = m.unscale(scale);
    let ev = match scaled.schur().eigenvalues() {
        Some(e) => [e[0], e[1], e[2]],
        None => {
            let r = polynomial_roots(&char_poly(&scaled));
            [r[0], r[1], r[2]]
        }
    };
    let mut ev = ev.map(|z| z * scale);
    ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    ev
}

/// Largest-modulus eigenvalue. Uses the characteristic cubic (with a Newton
/// polish) when that root is well separated, and the Schur form otherwise.
pub fn dominant_eigenvalue(m: &Mat3) -> Complex64 {
    let scale = m.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let a = m.unscale(scale);
    let c = char_poly(&a);
    let mut roots = polynomial_roots(&c);
    roots.sort_by(|x, y| y.norm().total_cmp(&x.norm()));
    let top = roots[0];
    let gap = (top - roots[1]).norm().min((top - roots[2]).norm());
    if gap > 1e-3 * top.norm().max(f64::MIN_POSITIVE) {
        let p = |x: Complex64| ((x + c[2]) * x + c[1]) * x + c[0];
        let dp = |x: Complex64| (x * 3.0 + c[2] * 2.0) * x + c[1];
        let mut x = top;
        for _ in 0..3 {
            let d = dp(x);
            if d.norm() == 0.0 {
                break;
            }
            x -= p(x) / d;
        }
        if (x - top).norm() < 1e-6 * top.norm() {
            return x * scale;
        }
    }
    eigenvalues(m)[0]
}

/// `|Im ξ| ≤ 10⁻⁸(1 + |ξ|)` and `Re ξ > 0`, evaluated for `ξ = exp(log_xi)`.
pub fn is_real_positive(log_xi: Complex64) -> bool {
    let (s, c) = log_xi.im.sin_cos();
    let bound = 1e-8 * (1.0 + (-log_xi.re).exp());
    c > 0.0 && s.abs() <= bound
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(a: f64, b: f64, c: f64) -> Mat3 {
        Mat3::from_diagonal(&nalgebra::Vector3::new(a, b, c).map(|v| Complex64::new(v, 0.0)))
    }

    #[test]
    fn diagonal_matrices() {
        let ev = eigenvalues(&diag(1.0, -5.0, 3.0));
        assert!((ev[0] - Complex64::new(-5.0, 0.0)).norm() < 1e-14);
        assert!((dominant_eigenvalue(&diag(1.0, 7.0, 3.0)) - Complex64::new(7.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn repeated_eigenvalues_via_schur() {
        let v = nalgebra::Matrix3::new(1.0, 2.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 3.0).map(|x| Complex64::new(x, 0.0));
        let m = v * diag(4.0, 4.0, 1.0) * v.try_inverse().unwrap();
        let d = dominant_eigenvalue(&m);
        assert!((d - Complex64::new(4.0, 0.0)).norm() < 1e-10, "{d}");
    }

    #[test]
    fn char_poly_of_companion() {
        let o = Complex64::new(0.0, 0.0);
        let l = Complex64::new(1.0, 0.0);
        let c = Mat3::new(o, l, o, o, o, l, l, o, o);
        let p = char_poly(&c);
        assert!((p[0] + l).norm() < 1e-15 && p[1].norm() < 1e-15 && p[2].norm() < 1e-15);
    }

    #[test]
    fn real_classification() {
        assert!(is_real_positive(Complex64::new(3.0, 0.0)));
        assert!(is_real_positive(Complex64::new(300.0, 1e-12)));
        assert!(!is_real_positive(Complex64::new(0.0, 1e-3)));
        assert!(!is_real_positive(Complex64::new(0.0, std::f64::consts::PI)));
    }
}
