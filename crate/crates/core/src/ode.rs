//! Dormand–Prince 5(4) integrator with PI step-size control and the
//! classical fourth-order continuous extension.
//!
//! The solver works on plain slices so the same code integrates the
//! three-dimensional model, its variational equations and any augmented
//! quadrature components.

use std::ops::ControlFlow;

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
    /// Clamp negative components of the first `project_dim` entries to zero
    /// after every accepted step.
    pub project_dim: usize,
}

impl OdeOptions {
    /// Relative tolerance `tol`, absolute tolerance `tol * 1e-2`.
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions {
            rtol: tol,
            atol: tol * 1e-2,
            h_init: None,
            h_max: f64::INFINITY,
            h_min: 1e-13,
            max_steps: 10_000_000,
            project_dim: 0,
        }
    }

    pub fn nonnegative(mut self, dim: usize) -> Self {
        self.project_dim = dim;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// One accepted step with its continuous extension.
pub struct DenseStep<'a> {
    pub t_old: f64,
    pub t: f64,
    pub y_old: &'a [f64],
    pub y: &'a [f64],
    rcont: &'a [Vec<f64>; 5],
}

impl DenseStep<'_> {
    pub fn h(&self) -> f64 {
        self.t - self.t_old
    }

    /// Interpolated component `i` at time `t`.
    pub fn eval_component(&self, i: usize, t: f64) -> f64 {
        let th = (t - self.t_old) / self.h();
        let th1 = 1.0 - th;
        let r = self.rcont;
        r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])))
    }

    pub fn eval(&self, t: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.eval_component(i, t);
        }
    }
}

/// Integrates `y' = f(t, y)` from `t0` to `t_end`, calling `observer` after
/// every accepted step. The observer may stop the integration early; the
/// returned time is then the end of the last accepted step.
pub fn integrate_with<F, O>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &OdeOptions,
    mut observer: O,
) -> Result<(f64, Vec<f64>, StepStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(&DenseStep<'_>) -> ControlFlow<()>,
{
    let n = y0.len();
    let mut stats = StepStats::default();
    let mut y = y0.to_vec();
    if t_end == t0 {
        return Ok((t0, y, stats));
    }
    let dir = (t_end - t0).signum();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut rcont: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);

    let mut t = t0;
    f(t, &y, &mut k[0]);
    stats.evaluations += 1;

    let mut h = match opts.h_init {
        Some(h) => h.abs(),
        None => initial_step(&mut f, t, &y, &k[0], dir, opts, &mut stats),
    };
    h = h.min(opts.h_max).min((t_end - t0).abs());
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;

    loop {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::NoConvergence(format!("ode: more than {} steps", opts.max_steps)));
        }
        let remaining = (t_end - t).abs();
        let mut last = false;
        if h >= remaining * (1.0 - 1e-12) {
            h = remaining;
            last = true;
        }
        if h < opts.h_min.max(1e-15 * t.abs()) && !last {
            return Err(Error::StepUnderflow { t, h });
        }
        let hs = dir * h;

        for i in 0..n {
            ytmp[i] = y[i] + hs * A21 * k[0][i];
        }
        f(t + C2 * hs, &ytmp, &mut k[1]);
        for i in 0..n {
            ytmp[i] = y[i] + hs * (A31 * k[0][i] + A32 * k[1][i]);
        }
        f(t + C3 * hs, &ytmp, &mut k[2]);
        for i in 0..n {
            ytmp[i] = y[i] + hs * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
        }
        f(t + C4 * hs, &ytmp, &mut k[3]);
        for i in 0..n {
            ytmp[i] = y[i] + hs * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
        }
        f(t + C5 * hs, &ytmp, &mut k[4]);
        for i in 0..n {
            ytmp[i] = y[i]
                + hs * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
        }
        let t_new = if last { t_end } else { t + hs };
        f(t + hs, &ytmp, &mut k[5]);
        for i in 0..n {
            ynew[i] = y[i]
                + hs * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
        }
        f(t_new, &ynew, &mut k[6]);
        stats.evaluations += 6;

        let mut sum = 0.0;
        for i in 0..n {
            err[i] = hs
                * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            sum += (err[i] / sc).powi(2);
        }
        let e = (sum / n as f64).sqrt();
        if !e.is_finite() {
            stats.rejected += 1;
            h *= FAC_MIN;
            last_rejected = true;
            continue;
        }

        let fac11 = e.powf(0.2 - BETA * 0.75);
        if e <= 1.0 {
            stats.accepted += 1;
            for i in 0..n {
                let dy = ynew[i] - y[i];
                let bspl = hs * k[0][i] - dy;
                rcont[0][i] = y[i];
                rcont[1][i] = dy;
                rcont[2][i] = bspl;
                rcont[3][i] = dy - hs * k[6][i] - bspl;
                rcont[4][i] = hs
                    * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
            }
            let mut projected = false;
            for v in ynew.iter_mut().take(opts.project_dim) {
                if *v < 0.0 {
                    *v = 0.0;
                    projected = true;
                }
            }
            let flow = observer(&DenseStep {
                t_old: t,
                t: t_new,
                y_old: &y,
                y: &ynew,
                rcont: &rcont,
            });
            std::mem::swap(&mut y, &mut ynew);
            t = t_new;
            if projected {
                f(t, &y, &mut k[6]);
                stats.evaluations += 1;
            }
            k.swap(0, 6);
            if last || flow.is_break() {
                return Ok((t, y, stats));
            }
            let mut fac = fac11 / fac_old.powf(BETA);
            fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            fac_old = e.max(1e-4);
            h = h_new.min(opts.h_max);
            last_rejected = false;
        } else {
            stats.rejected += 1;
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            last_rejected = true;
        }
    }
}

/// Integrates to `t_end` and returns the final state.
pub fn integrate_to<F>(f: F, t0: f64, y0: &[f64], t_end: f64, opts: &OdeOptions) -> Result<(Vec<f64>, StepStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let (_, y, stats) = integrate_with(f, t0, y0, t_end, opts, |_| ControlFlow::Continue(()))?;
    Ok((y, stats))
}

fn initial_step<F>(
    f: &mut F,
    t: f64,
    y: &[f64],
    f0: &[f64],
    dir: f64,
    opts: &OdeOptions,
    stats: &mut StepStats,
) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..n {
        let sk = opts.atol + opts.rtol * y[i].abs();
        dnf += (f0[i] / sk).powi(2);
        dny += (y[i] / sk).powi(2);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        (dny / dnf).sqrt() * 0.01
    };
    h = h.min(opts.h_max);
    let y1: Vec<f64> = (0..n).map(|i| y[i] + dir * h * f0[i]).collect();
    let mut f1 = vec![0.0; n];
    f(t + dir * h, &y1, &mut f1);
    stats.evaluations += 1;
    let mut der2 = 0.0;
    for i in 0..n {
        let sk = opts.atol + opts.rtol * y[i].abs();
        der2 += ((f1[i] - f0[i]) / sk).powi(2);
    }
    let der2 = der2.sqrt() / h;
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    (100.0 * h).min(h1).min(opts.h_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let (y, stats) = integrate_to(
            |_, y, dy| dy[0] = -y[0],
            0.0,
            &[1.0],
            5.0,
            &OdeOptions::with_tol(1e-10),
        )
        .unwrap();
        assert!((y[0] - (-5f64).exp()).abs() < 1e-10);
        assert!(stats.accepted > 0);
    }

    #[test]
    fn harmonic_oscillator_dense_output() {
        let opts = OdeOptions::with_tol(1e-10);
        let mut max_err: f64 = 0.0;
        integrate_with(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            &[1.0, 0.0],
            10.0,
            &opts,
            |step| {
                let tm = 0.5 * (step.t_old + step.t);
                max_err = max_err.max((step.eval_component(0, tm) - tm.cos()).abs());
                ControlFlow::Continue(())
            },
        )
        .unwrap();
        assert!(max_err < 1e-8, "dense output error {max_err}");
    }

    #[test]
    fn backward_integration() {
        let (y, _) = integrate_to(|_, y, dy| dy[0] = y[0], 1.0, &[1.0], 0.0, &OdeOptions::with_tol(1e-10)).unwrap();
        assert!((y[0] - (-1f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn early_stop() {
        let (t, _, _) = integrate_with(
            |_, _, dy| dy[0] = 1.0,
            0.0,
            &[0.0],
            100.0,
            &OdeOptions::with_tol(1e-8),
            |step| if step.y[0] > 1.0 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) },
        )
        .unwrap();
        assert!(t < 100.0);
    }

    #[test]
    fn blow_up_underflows() {
        let r = integrate_to(|_, y, dy| dy[0] = y[0] * y[0], 0.0, &[1.0], 2.0, &OdeOptions::with_tol(1e-8));
        assert!(r.is_err());
    }
}
