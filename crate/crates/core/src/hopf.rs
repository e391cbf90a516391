//! Center eigenvectors and the first Lyapunov coefficient at a Hopf point.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{jacobian, ModelParams, State};

type CVec = Vector3<Complex64>;
type CMat = Matrix3<Complex64>;

/// Relative finite-difference step for the second and third derivatives.
const FD_STEP: f64 = 1e-4;
/// Below this frequency the Hopf point is too close to Bogdanov–Takens.
const MIN_OMEGA: f64 = 1e-6;

fn complexify(a: &Matrix3<f64>) -> CMat {
    a.map(|v| Complex64::new(v, 0.0))
}

fn cross(a: &CVec, b: &CVec) -> CVec {
    CVec::new(
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )
}

/// Null vector of a rank-2 complex 3x3 matrix: the largest cross product
/// of two of its rows (bilinear, so orthogonal to each row without
/// conjugation).
fn null_vector3(m: &CMat) -> CVec {
    let rows: Vec<CVec> = (0..3).map(|i| m.row(i).transpose()).collect();
    let mut best = CVec::zeros();
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let c = cross(&rows[i], &rows[j]);
        if c.norm() > best.norm() {
            best = c;
        }
    }
    best
}

/// `<a, b> = sum conj(a_i) b_i`.
fn inner(a: &CVec, b: &CVec) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Right eigenvector `q` (`A q = i w q`, unit norm) and adjoint `p`
/// (`A^T p = -i w p`, `<p, q> = 1`).
pub fn center_vectors(a: &Matrix3<f64>, omega: f64) -> (CVec, CVec) {
    let iw = Complex64::new(0.0, omega);
    let mut q = null_vector3(&(complexify(a) - CMat::identity() * iw));
    q /= Complex64::new(q.norm(), 0.0);
    let mut p = null_vector3(&(complexify(&a.transpose()) + CMat::identity() * iw));
    let c = inner(&p, &q);
    p /= c.conj();
    (q, p)
}

/// Symmetric multilinear forms of the vector field built from central
/// differences of the analytic Jacobian.
struct Derivatives<J> {
    x: Vector3<f64>,
    jac: J,
    h: f64,
}

impl<J: Fn(&Vector3<f64>) -> Matrix3<f64>> Derivatives<J> {
    fn jac_at(&self, dx: &Vector3<f64>) -> Matrix3<f64> {
        (self.jac)(&(self.x + dx))
    }

    /// `B(u, v)` for real `u`.
    fn b_real(&self, u: &Vector3<f64>, v: &CVec) -> CVec {
        let scale = self.h / u.norm().max(f64::MIN_POSITIVE);
        let d = (self.jac_at(&(u * scale)) - self.jac_at(&(-u * scale))) / (2.0 * scale);
        complexify(&d) * v
    }

    fn b(&self, u: &CVec, v: &CVec) -> CVec {
        let (re, im) = (u.map(|z| z.re), u.map(|z| z.im));
        let mut out = CVec::zeros();
        if re.norm() > 0.0 {
            out += self.b_real(&re, v);
        }
        if im.norm() > 0.0 {
            out += self.b_real(&im, v) * Complex64::new(0.0, 1.0);
        }
        out
    }

    /// `C(u, u, w)` for real `u`.
    fn c_diag(&self, u: &Vector3<f64>, w: &CVec) -> CVec {
        let n = u.norm();
        if n == 0.0 {
            return CVec::zeros();
        }
        let scale = self.h / n;
        let j0 = (self.jac)(&self.x);
        let d = (self.jac_at(&(u * scale)) - j0 * 2.0 + self.jac_at(&(-u * scale))) / (scale * scale);
        complexify(&d) * w
    }

    /// `C(q, q, w)` for complex `q = a + i b`, by polarization.
    fn c(&self, q: &CVec, w: &CVec) -> CVec {
        let (a, b) = (q.map(|z| z.re), q.map(|z| z.im));
        let caa = self.c_diag(&a, w);
        let cbb = self.c_diag(&b, w);
        let cab = (self.c_diag(&(a + b), w) - self.c_diag(&(a - b), w)) * Complex64::new(0.25, 0.0);
        caa - cbb + cab * Complex64::new(0.0, 2.0)
    }
}

/// First Lyapunov coefficient at an equilibrium `x` whose Jacobian has the
/// eigenvalues `+-i omega`, using the projection formula
/// `l1 = Re[<p, C(q,q,conj q)> - 2 <p, B(q, A^-1 B(q, conj q))>
///        + <p, B(conj q, (2 i w - A)^-1 B(q, q))>] / (2 w)`.
pub fn first_lyapunov(x: &State, p: &ModelParams, omega: f64) -> Result<f64> {
    first_lyapunov_scaled(x, p, omega, Complex64::new(1.0, 0.0))
}

/// As [`first_lyapunov`] with the right eigenvector multiplied by `scale`
/// before the adjoint is normalized against it. The sign of the result
/// does not depend on `scale`.
pub fn first_lyapunov_scaled(x: &State, p: &ModelParams, omega: f64, scale: Complex64) -> Result<f64> {
    lyapunov_generic(&x.to_vector(), |y| jacobian(&State::from_vector(y), p), omega, scale)
}

/// Projection formula for any smooth field given through its Jacobian.
pub(crate) fn lyapunov_generic<J>(x: &Vector3<f64>, jac: J, omega: f64, scale: Complex64) -> Result<f64>
where
    J: Fn(&Vector3<f64>) -> Matrix3<f64>,
{
    if !(omega > MIN_OMEGA) {
        return Err(Error::IllConditioned(format!(
            "Hopf frequency {omega:.3e} too small for the normal form"
        )));
    }
    let a = jac(x);
    let (q0, _) = center_vectors(&a, omega);
    let q = q0 * scale;
    let iw = Complex64::new(0.0, omega);
    let mut adj = null_vector3(&(complexify(&a.transpose()) + CMat::identity() * iw));
    adj /= inner(&adj, &q).conj();

    let h = FD_STEP * (1.0 + x.amax());
    let d = Derivatives { x: *x, jac, h };
    let qb = q.map(|z| z.conj());

    let ac = complexify(&a);
    let bqqb = d.b(&q, &qb);
    let s1 = ac.lu().solve(&bqqb).ok_or(Error::SingularMatrix)?;
    let bqq = d.b(&q, &q);
    let shifted = CMat::identity() * (iw * 2.0) - ac;
    let s2 = shifted.lu().solve(&bqq).ok_or(Error::SingularMatrix)?;

    let term = inner(&adj, &d.c(&q, &qb)) - inner(&adj, &d.b(&q, &s1)) * 2.0 + inner(&adj, &d.b(&qb, &s2));
    let l1 = term.re / (2.0 * omega);
    if l1.is_finite() {
        Ok(l1)
    } else {
        Err(Error::IllConditioned("non-finite Lyapunov coefficient".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_vectors_are_eigenvectors() {
        let a = Matrix3::new(0.0, -2.0, 0.0, 2.0, 0.0, 0.0, 1.0, 1.0, -3.0);
        let (q, p) = center_vectors(&a, 2.0);
        let iw = Complex64::new(0.0, 2.0);
        assert!((complexify(&a) * q - q * iw).norm() < 1e-12);
        assert!((complexify(&a.transpose()) * p + p * iw).norm() < 1e-12);
        assert!((inner(&p, &q) - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }

    /// `x' = -w y + a x r^2`, `y' = w x + a y r^2`, `z' = -z + x^2`:
    /// on the center manifold the radial equation is `r' = a r^3`.
    fn normal_form_jac(w: f64, a: f64) -> impl Fn(&Vector3<f64>) -> Matrix3<f64> {
        move |v| {
            let (x, y) = (v[0], v[1]);
            let r2 = x * x + y * y;
            Matrix3::new(
                a * (r2 + 2.0 * x * x), -w + 2.0 * a * x * y, 0.0,
                w + 2.0 * a * x * y, a * (r2 + 2.0 * y * y), 0.0,
                2.0 * x, 0.0, -1.0,
            )
        }
    }

    #[test]
    fn normal_form_coefficient() {
        for a in [-0.7, 0.3] {
            let l1 = lyapunov_generic(&Vector3::zeros(), normal_form_jac(1.5, a), 1.5, Complex64::new(1.0, 0.0)).unwrap();
            // with |q| = 1 the normal form reads z' = i w z + 2 a z|z|^2, and l1 = Re(c1) / w
            let want = 2.0 * a / 1.5;
            assert!((l1 - want).abs() < 1e-5, "{l1} vs {want}");
        }
    }

    #[test]
    fn small_omega_is_rejected() {
        let p = ModelParams::default();
        let x = State::new(0.3, 0.2, 0.2);
        assert!(matches!(first_lyapunov(&x, &p, 0.0), Err(Error::IllConditioned(_))));
    }
}
