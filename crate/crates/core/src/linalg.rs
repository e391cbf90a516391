//! Small dense helpers: the monic cubic solver used for equilibrium spectra
//! and a few vector utilities shared by the Newton solvers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Roots of `l^3 + c1 l^2 + c2 l + c3`.
///
/// Real roots come first in ascending order; a complex pair is returned as
/// `(mu + i nu, mu - i nu)` with `nu > 0`.
pub fn cubic_roots(c1: f64, c2: f64, c3: f64) -> [Complex64; 3] {
    // depressed cubic t^3 + p t + q with l = t - c1/3
    let shift = c1 / 3.0;
    let p = c2 - c1 * c1 / 3.0;
    let q = 2.0 * c1 * c1 * c1 / 27.0 - c1 * c2 / 3.0 + c3;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);

    let poly = |l: f64| ((l + c1) * l + c2) * l + c3;
    let dpoly = |l: f64| (3.0 * l + 2.0 * c1) * l + c2;
    let polish = |mut l: f64| {
        for _ in 0..3 {
            let d = dpoly(l);
            if d == 0.0 {
                break;
            }
            let step = poly(l) / d;
            if !step.is_finite() {
                break;
            }
            l -= step;
            if step.abs() <= 1e-16 * l.abs().max(1.0) {
                break;
            }
        }
        l
    };

    if disc <= 0.0 && p < 0.0 {
        // three real roots, trigonometric form
        let r = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * r)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        let mut roots = [0.0; 3];
        for (k, root) in roots.iter_mut().enumerate() {
            let t = r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos();
            *root = polish(t - shift);
        }
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        return roots.map(|r| Complex64::new(r, 0.0));
    }

    // one real root (or a triple root when p = q = 0)
    let sq = disc.max(0.0).sqrt();
    let u = (-q / 2.0 + sq).cbrt();
    let v = (-q / 2.0 - sq).cbrt();
    let real = polish(u + v - shift);
    // deflate: l^2 + b l + c
    let b = c1 + real;
    let c = if real.abs() > 1e-3 * (c2.abs().sqrt() + c1.abs()).max(1e-300) {
        -c3 / real
    } else {
        c2 + real * b
    };
    let mu = -b / 2.0;
    let nu2 = c - mu * mu;
    if nu2 > 0.0 {
        let nu = nu2.sqrt();
        [
            Complex64::new(real, 0.0),
            Complex64::new(mu, nu),
            Complex64::new(mu, -nu),
        ]
    } else {
        let s = (-nu2).sqrt();
        let mut roots = [real, polish(mu - s), polish(mu + s)];
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        roots.map(|r| Complex64::new(r, 0.0))
    }
}

/// Solves `a x = b` with partial-pivot LU.
pub fn solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = a.lu();
    let x = lu.solve(b).ok_or(Error::SingularMatrix)?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::SingularMatrix)
    }
}

/// Null vector of an `n x (n+1)` full-rank matrix, oriented so that its
/// inner product with `reference` is nonnegative.
pub fn null_vector(jac: &DMatrix<f64>, reference: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    let n = jac.nrows();
    debug_assert_eq!(jac.ncols(), n + 1);
    // try the supplied reference first, then coordinate directions
    let mut candidates: Vec<DVector<f64>> = Vec::new();
    if let Some(r) = reference {
        candidates.push(r.clone());
    }
    for k in (0..=n).rev() {
        let mut e = DVector::zeros(n + 1);
        e[k] = 1.0;
        candidates.push(e);
    }
    let mut best: Option<DVector<f64>> = None;
    for c in candidates {
        let mut aug = DMatrix::zeros(n + 1, n + 1);
        aug.rows_mut(0, n).copy_from(jac);
        aug.row_mut(n).copy_from(&c.transpose());
        let mut rhs = DVector::zeros(n + 1);
        rhs[n] = 1.0;
        if let Ok(t) = solve(aug, &rhs) {
            let norm = t.norm();
            if norm > 0.0 && norm.is_finite() {
                best = Some(t / norm);
                break;
            }
        }
    }
    let mut t = best.ok_or(Error::SingularMatrix)?;
    if let Some(r) = reference {
        if t.dot(r) < 0.0 {
            t = -t;
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eval(c: [f64; 3], z: Complex64) -> Complex64 {
        ((z + c[0]) * z + c[1]) * z + c[2]
    }

    #[test]
    fn known_roots() {
        // (l + 1)(l + 2)(l + 3)
        let r = cubic_roots(6.0, 11.0, 6.0);
        for (got, want) in r.iter().zip([-3.0, -2.0, -1.0]) {
            assert!((got.re - want).abs() < 1e-12 && got.im == 0.0);
        }
        // (l + 1)(l^2 + 4): pure imaginary pair
        let r = cubic_roots(1.0, 4.0, 4.0);
        assert!((r[0].re + 1.0).abs() < 1e-12);
        assert!(r[1].re.abs() < 1e-12 && (r[1].im - 2.0).abs() < 1e-12);
    }

    #[test]
    fn washout_like_diagonal() {
        let (a, b, c) = (0.2, 1.0, 1.7);
        let r = cubic_roots(a + b + c, a * b + a * c + b * c, a * b * c);
        for (got, want) in r.iter().zip([-1.7, -1.0, -0.2]) {
            assert!((got.re - want).abs() < 1e-13);
        }
    }

    proptest! {
        #[test]
        fn roots_satisfy_polynomial(c1 in -5.0f64..5.0, c2 in -5.0f64..5.0, c3 in -5.0f64..5.0) {
            let roots = cubic_roots(c1, c2, c3);
            for z in roots {
                let scale = 1.0 + z.norm().powi(3) + c1.abs() * z.norm_sqr() + c2.abs() * z.norm() + c3.abs();
                prop_assert!(eval([c1, c2, c3], z).norm() < 1e-9 * scale);
            }
            // Vieta: sum of roots = -c1
            let sum: Complex64 = roots.iter().sum();
            prop_assert!((sum.re + c1).abs() < 1e-7 * (1.0 + c1.abs()));
        }
    }

    #[test]
    fn null_vector_of_row() {
        let j = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let t = null_vector(&j, None).unwrap();
        assert!((t[0] - t[1]).abs() < 1e-14);
        assert!((t.norm() - 1.0).abs() < 1e-14);
    }
}
