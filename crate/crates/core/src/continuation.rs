//! Pseudo-arclength continuation of the solution curve of `F(y) = 0`,
//! `F: R^(n+1) -> R^n`.
//!
//! Arclength is measured in a diagonally weighted norm so that problems
//! with many state unknowns (multiple-shooting meshes) do not drown the
//! parameter direction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{null_vector, solve};

pub trait ContinuationProblem {
    /// Number of unknowns (`n + 1`).
    fn dim(&self) -> usize;

    fn residual(&self, y: &DVector<f64>) -> Result<DVector<f64>>;

    /// `n x (n+1)` Jacobian of [`residual`](Self::residual).
    fn jacobian(&self, y: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// Diagonal weights of the arclength metric.
    fn weights(&self) -> DVector<f64> {
        DVector::from_element(self.dim(), 1.0)
    }

    /// Called for every accepted point; problems with moving anchors
    /// (phase conditions) update themselves here.
    fn accept(&mut self, _y: &DVector<f64>) {}

    /// Whether `y` is still inside the region of interest.
    fn admissible(&self, _y: &DVector<f64>) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPolicy {
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub shrink: f64,
    pub grow: f64,
    /// Consecutive successes needed before growing.
    pub grow_after: usize,
    pub max_newton: usize,
    /// Newton converges when the weighted update norm drops below this...
    pub step_tol: f64,
    /// ...and the residual max-norm below this.
    pub residual_tol: f64,
    pub max_points: usize,
    /// Largest accepted angle (radians) between consecutive tangents.
    pub max_angle: f64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy {
            h_init: 1e-3,
            h_min: 1e-6,
            h_max: 0.05,
            shrink: 0.5,
            grow: 1.3,
            grow_after: 3,
            max_newton: 12,
            step_tol: 1e-11,
            residual_tol: 1e-10,
            max_points: 20_000,
            max_angle: 0.35,
        }
    }
}

pub(crate) fn weighted_dot(w: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).zip(w.iter()).map(|((x, y), w)| w * x * y).sum()
}

pub(crate) fn weighted_norm(w: &DVector<f64>, a: &DVector<f64>) -> f64 {
    weighted_dot(w, a, a).sqrt()
}

/// Unit tangent (in the weighted metric) at `y`, oriented along `prev`.
pub fn tangent<P: ContinuationProblem + ?Sized>(
    problem: &P,
    y: &DVector<f64>,
    prev: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let w = problem.weights();
    let jac = problem.jacobian(y)?;
    // the null space is metric independent; only the normalization is not
    let reference = prev.map(|t| t.component_mul(&w));
    let mut t = null_vector(&jac, reference.as_ref())?;
    let nrm = weighted_norm(&w, &t);
    t /= nrm;
    if let Some(pt) = prev {
        if weighted_dot(&w, &t, pt) < 0.0 {
            t = -t;
        }
    }
    Ok(t)
}

/// Newton corrector on `F(y) = 0`, `<t, y - anchor>_W = 0`.
pub fn correct<P: ContinuationProblem + ?Sized>(
    problem: &P,
    guess: &DVector<f64>,
    anchor: &DVector<f64>,
    t: &DVector<f64>,
    policy: &StepPolicy,
) -> Result<(DVector<f64>, usize)> {
    let n = problem.dim();
    let w = problem.weights();
    let wt = t.component_mul(&w);
    let mut y = guess.clone();
    let mut last_step = f64::INFINITY;
    for it in 0..policy.max_newton {
        let r = problem.residual(&y)?;
        let arc = wt.dot(&(&y - anchor));
        let res_norm = r.amax();
        if res_norm <= policy.residual_tol && last_step <= policy.step_tol {
            return Ok((y, it));
        }
        let jac = problem.jacobian(&y)?;
        let mut a = DMatrix::zeros(n, n);
        a.rows_mut(0, n - 1).copy_from(&jac);
        a.row_mut(n - 1).copy_from(&wt.transpose());
        let mut rhs = DVector::zeros(n);
        rhs.rows_mut(0, n - 1).copy_from(&r);
        rhs[n - 1] = arc;
        let dy = solve(a, &rhs)?;
        y -= &dy;
        let step = weighted_norm(&w, &dy);
        if !step.is_finite() || !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NoConvergence("corrector diverged".into()));
        }
        if it > 2 && step > 2.0 * last_step && last_step < 1.0 {
            return Err(Error::NoConvergence("corrector not contracting".into()));
        }
        last_step = step;
    }
    let r = problem.residual(&y)?;
    if r.amax() <= policy.residual_tol && last_step <= 100.0 * policy.step_tol {
        Ok((y, policy.max_newton))
    } else {
        Err(Error::NoConvergence(format!(
            "corrector residual {:.3e}, last update {:.3e}",
            r.amax(),
            last_step
        )))
    }
}

/// One accepted continuation point.
#[derive(Debug, Clone)]
pub struct ContPoint {
    pub y: DVector<f64>,
    pub tangent: DVector<f64>,
    pub arclength: f64,
}

/// Reason a run stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    /// Left the admissible set or the requested window.
    Boundary,
    MaxPoints,
    /// Step size collapsed below the floor.
    StepUnderflow(String),
    /// The caller's callback asked to stop.
    Requested,
}

/// Predictor–corrector stepping with the adaptive step rule:
/// halve on failure, grow by `grow` after `grow_after` successes.
pub struct Stepper<'a, P: ContinuationProblem + ?Sized> {
    pub problem: &'a mut P,
    pub policy: StepPolicy,
    pub current: ContPoint,
    pub h: f64,
    successes: usize,
}

impl<'a, P: ContinuationProblem + ?Sized> Stepper<'a, P> {
    pub fn new(problem: &'a mut P, start: DVector<f64>, direction: &DVector<f64>, policy: StepPolicy) -> Result<Self> {
        let t = tangent(&*problem, &start, Some(direction))?;
        problem.accept(&start);
        Ok(Stepper {
            problem,
            policy,
            current: ContPoint { y: start, tangent: t, arclength: 0.0 },
            h: policy.h_init,
            successes: 0,
        })
    }

    /// Attempts one step; returns `Ok(None)` when the step was rejected and
    /// retried with a smaller size is needed, `Err` on underflow.
    pub fn step(&mut self) -> Result<ContPoint> {
        loop {
            if self.h < self.policy.h_min {
                return Err(Error::Terminated(format!("step size below {:.1e}", self.policy.h_min)));
            }
            let pred = &self.current.y + &self.current.tangent * self.h;
            let attempt = correct(&*self.problem, &pred, &pred, &self.current.tangent, &self.policy)
                .and_then(|(y, its)| {
                    let t = tangent(&*self.problem, &y, Some(&self.current.tangent))?;
                    Ok((y, t, its))
                });
            match attempt {
                Ok((y, t, its)) => {
                    let w = self.problem.weights();
                    let cosang = weighted_dot(&w, &t, &self.current.tangent).clamp(-1.0, 1.0);
                    let dist = weighted_norm(&w, &(&y - &self.current.y));
                    if cosang.acos() > self.policy.max_angle || dist > 2.0 * self.h {
                        self.h *= self.policy.shrink;
                        self.successes = 0;
                        continue;
                    }
                    let point = ContPoint {
                        y,
                        tangent: t,
                        arclength: self.current.arclength + dist,
                    };
                    self.successes += 1;
                    if self.successes >= self.policy.grow_after && its <= self.policy.max_newton / 2 {
                        self.h = (self.h * self.policy.grow).min(self.policy.h_max);
                        self.successes = 0;
                    }
                    return Ok(point);
                }
                Err(_) => {
                    self.h *= self.policy.shrink;
                    self.successes = 0;
                }
            }
        }
    }

    pub fn commit(&mut self, point: ContPoint) {
        self.problem.accept(&point.y);
        self.current = point;
    }
}

/// Point on the curve at weighted arclength `s` ahead of `base` along its
/// tangent, corrected back onto the curve.
pub fn point_at<P: ContinuationProblem + ?Sized>(
    problem: &P,
    base: &ContPoint,
    s: f64,
    policy: &StepPolicy,
) -> Result<ContPoint> {
    let pred = &base.y + &base.tangent * s;
    let (y, _) = correct(problem, &pred, &pred, &base.tangent, policy)?;
    let t = tangent(problem, &y, Some(&base.tangent))?;
    Ok(ContPoint { y, tangent: t, arclength: base.arclength + s })
}

/// Secant/regula-falsi search for a zero of `test` between two accepted
/// points, parameterized by arclength along the left point's tangent.
pub fn locate_zero<P, T>(
    problem: &P,
    left: &ContPoint,
    right: &ContPoint,
    test: T,
    tol: f64,
    policy: &StepPolicy,
) -> Result<ContPoint>
where
    P: ContinuationProblem + ?Sized,
    T: Fn(&ContPoint) -> Result<f64>,
{
    let w = problem.weights();
    let span = weighted_dot(&w, &(&right.y - &left.y), &left.tangent);
    let (mut a, mut b) = (0.0, span);
    let (mut fa, mut fb) = (test(left)?, test(right)?);
    if fa == 0.0 {
        return Ok(left.clone());
    }
    if fb == 0.0 {
        return Ok(right.clone());
    }
    if (fa > 0.0) == (fb > 0.0) {
        return Err(Error::Localization("test function does not change sign".into()));
    }
    let mut side = 0i32;
    let mut best = right.clone();
    for _ in 0..60 {
        // Illinois variant of regula falsi
        let mut s = b - fb * (b - a) / (fb - fa);
        if !(s > a.min(b) && s < a.max(b)) {
            s = 0.5 * (a + b);
        }
        let pt = point_at(problem, left, s, policy)?;
        let fs = test(&pt)?;
        best = pt;
        if fs.abs() < tol || (b - a).abs() < 1e-15 * (1.0 + span.abs()) {
            return Ok(best);
        }
        if (fs > 0.0) == (fb > 0.0) {
            b = s;
            fb = fs;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        } else {
            a = s;
            fa = fs;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        }
    }
    let f = test(&best)?;
    if f.abs() < 1e3 * tol {
        Ok(best)
    } else {
        Err(Error::Localization(format!("no convergence after 60 iterations, |test| = {:.3e}", f.abs())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Unit circle x^2 + y^2 = 1.
    struct Circle;

    impl ContinuationProblem for Circle {
        fn dim(&self) -> usize {
            2
        }
        fn residual(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_element(1, y[0] * y[0] + y[1] * y[1] - 1.0))
        }
        fn jacobian(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_row_slice(1, 2, &[2.0 * y[0], 2.0 * y[1]]))
        }
    }

    #[test]
    fn traces_circle_through_folds() {
        let mut c = Circle;
        let dir = DVector::from_vec(vec![0.0, 1.0]);
        let policy = StepPolicy { h_init: 0.05, h_max: 0.1, ..StepPolicy::default() };
        let mut st = Stepper::new(&mut c, DVector::from_vec(vec![1.0, 0.0]), &dir, policy).unwrap();
        let mut folds = 0;
        for _ in 0..200 {
            let prev = st.current.clone();
            let next = st.step().unwrap();
            if (prev.tangent[0] > 0.0) != (next.tangent[0] > 0.0) {
                folds += 1;
                let fold = locate_zero(&Circle, &prev, &next, |p| Ok(p.tangent[0]), 1e-12, &policy).unwrap();
                assert!((fold.y[1].abs() - 1.0).abs() < 1e-10 || (fold.y[0].abs() - 1.0).abs() < 1e-10);
            }
            st.commit(next);
            if st.current.arclength > 2.0 * std::f64::consts::PI {
                break;
            }
        }
        assert_eq!(folds, 2);
    }
}
