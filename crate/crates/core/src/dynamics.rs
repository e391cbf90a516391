//! Time integration, attractor classification and basin maps.

use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibria::{all_equilibria, Equilibrium};
use crate::error::{Error, Result};
use crate::model::{rhs, ModelParams, State};
use crate::ode::{integrate_with, DenseStep, OdeOptions, StepStats};

/// Default integration budget of [`classify_attractor`].
pub const DEFAULT_BUDGET: f64 = 5000.0;
/// Default relative tolerance of the classifier.
pub const DEFAULT_TOL: f64 = 1e-10;

const VELOCITY_TOL: f64 = 1e-9;
const EQUILIBRIUM_MATCH: f64 = 1e-5;
const RETURN_MATCH: f64 = 1e-5;
const PERIOD_MATCH: f64 = 1e-6;
/// Largest number of section returns within one period that is searched.
const MAX_RETURNS_PER_PERIOD: usize = 8;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn last(&self) -> Option<State> {
        self.states.last().copied()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

pub(crate) fn field(p: &ModelParams) -> impl Fn(f64, &[f64], &mut [f64]) + '_ {
    move |_, y, dy| {
        let f = rhs(&State::from_slice(y), p);
        dy[0] = f.s;
        dy[1] = f.x1;
        dy[2] = f.x2;
    }
}

fn check_initial(initial: &State, tol: f64) -> Result<()> {
    if !initial.is_nonnegative() || !initial.to_array().iter().all(|v| v.is_finite()) {
        return Err(Error::Domain(format!("initial state must be nonnegative, got {initial:?}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParams(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Integrates from `initial` to `t_end`, recording every accepted step.
pub fn integrate(initial: &State, p: &ModelParams, t_end: f64, tol: f64) -> Result<Trajectory> {
    integrate_sampled(initial, p, t_end, tol, None)
}

/// As [`integrate`], but when `dt` is given the output is resampled on the
/// uniform grid `0, dt, 2 dt, ...` (plus `t_end`) from the dense output.
pub fn integrate_sampled(
    initial: &State,
    p: &ModelParams,
    t_end: f64,
    tol: f64,
    dt: Option<f64>,
) -> Result<Trajectory> {
    check_initial(initial, tol)?;
    if let Some(dt) = dt {
        if !(dt > 0.0) {
            return Err(Error::InvalidParams(format!("sampling interval must be positive, got {dt}")));
        }
    }
    let opts = OdeOptions::with_tol(tol).nonnegative(3);
    let mut traj = Trajectory { times: vec![0.0], states: vec![*initial], ..Default::default() };
    let mut next_sample = 1usize;
    let (_, _, stats) = integrate_with(field(p), 0.0, &initial.to_array(), t_end, &opts, |step: &DenseStep| {
        match dt {
            None => {
                traj.times.push(step.t);
                traj.states.push(State::from_slice(step.y));
            }
            Some(dt) => {
                let mut buf = [0.0; 3];
                loop {
                    let ts = next_sample as f64 * dt;
                    if ts > step.t || ts > t_end {
                        break;
                    }
                    step.eval(ts, &mut buf);
                    traj.times.push(ts);
                    traj.states.push(State::from_slice(&buf.map(|v| v.max(0.0))));
                    next_sample += 1;
                }
                if step.t >= t_end && *traj.times.last().unwrap() < t_end {
                    traj.times.push(step.t);
                    traj.states.push(State::from_slice(step.y));
                }
            }
        }
        ControlFlow::Continue(())
    })?;
    traj.stats = stats;
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttractorKind {
    /// `index` refers to [`all_equilibria`]: 0 is washout.
    Equilibrium { index: usize, state: State },
    Cycle { period: f64, reference: State },
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractorLabel {
    #[serde(flatten)]
    pub kind: AttractorKind,
    /// Time at which the label was decided (the budget when unresolved).
    pub transient: f64,
}

impl AttractorLabel {
    pub fn period(&self) -> Option<f64> {
        match self.kind {
            AttractorKind::Cycle { period, .. } => Some(period),
            _ => None,
        }
    }

    /// Whether two labels name the same attractor: same equilibrium index,
    /// or cycles whose periods agree to `period_rtol`.
    pub fn same_attractor(&self, other: &AttractorLabel, period_rtol: f64) -> bool {
        match (&self.kind, &other.kind) {
            (AttractorKind::Equilibrium { index: a, .. }, AttractorKind::Equilibrium { index: b, .. }) => a == b,
            (AttractorKind::Cycle { period: a, .. }, AttractorKind::Cycle { period: b, .. }) => {
                (a - b).abs() <= period_rtol * a.max(*b)
            }
            (AttractorKind::Unresolved, AttractorKind::Unresolved) => true,
            _ => false,
        }
    }

    /// Short tag used in CSV output: `E0`, `E1`, ..., `C(T=12.345)`, `unresolved`.
    pub fn tag(&self) -> String {
        match &self.kind {
            AttractorKind::Equilibrium { index, .. } => format!("E{index}"),
            AttractorKind::Cycle { period, .. } => format!("C(T={period:.3})"),
            AttractorKind::Unresolved => "unresolved".into(),
        }
    }
}

/// Representatives of the distinct attractors among `labels`, in order of
/// first appearance. Unresolved labels are skipped.
pub fn distinct_attractors(labels: &[AttractorLabel], period_rtol: f64) -> Vec<AttractorLabel> {
    let mut out: Vec<AttractorLabel> = Vec::new();
    for l in labels {
        if matches!(l.kind, AttractorKind::Unresolved) {
            continue;
        }
        if !out.iter().any(|o| o.same_attractor(l, period_rtol)) {
            out.push(l.clone());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    pub budget: f64,
    pub tol: f64,
    /// Time skipped before the section is placed.
    pub warmup: f64,
    /// Averaging window for the section anchor.
    pub window: f64,
    /// The section is re-placed if no period is found within this time.
    pub replace_after: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            budget: DEFAULT_BUDGET,
            tol: DEFAULT_TOL,
            warmup: 100.0,
            window: 100.0,
            replace_after: 1000.0,
        }
    }
}

impl ClassifyOptions {
    pub fn with_budget(budget: f64) -> Self {
        ClassifyOptions { budget, ..Default::default() }
    }
}

enum Phase {
    Warmup,
    Averaging { start: f64, sum: [f64; 3], normal: [f64; 3] },
    Section { placed: f64, point: [f64; 3], normal: [f64; 3], returns: Vec<(f64, [f64; 3])> },
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Crossing time of the section inside one dense step.
fn crossing(step: &DenseStep, point: &[f64; 3], normal: &[f64; 3]) -> (f64, [f64; 3]) {
    let g = |t: f64| {
        let mut y = [0.0; 3];
        step.eval(t, &mut y);
        let d = [y[0] - point[0], y[1] - point[1], y[2] - point[2]];
        (dot(&d, normal), y)
    };
    let (mut a, mut b) = (step.t_old, step.t);
    let (mut ga, mut gb) = (g(a).0, g(b).0);
    let mut y = [0.0; 3];
    let mut t = b;
    for _ in 0..80 {
        t = if gb != ga { b - gb * (b - a) / (gb - ga) } else { 0.5 * (a + b) };
        if !(t > a && t < b) {
            t = 0.5 * (a + b);
        }
        let (gt, yt) = g(t);
        y = yt;
        if gt == 0.0 || (b - a) < 1e-14 * (1.0 + t.abs()) {
            break;
        }
        if (gt < 0.0) == (ga < 0.0) {
            a = t;
            ga = gt;
            gb *= 0.5;
        } else {
            b = t;
            gb = gt;
            ga *= 0.5;
        }
        if gt.abs() < 1e-15 {
            break;
        }
    }
    (t, y)
}

/// Looks for a period among the recorded returns: the latest return must
/// match an earlier one `j` returns back, and the `j` returns before that
/// must repeat with the same return time.
fn detect_period(returns: &[(f64, [f64; 3])]) -> Option<(f64, [f64; 3])> {
    let n = returns.len();
    for j in 1..=MAX_RETURNS_PER_PERIOD {
        if n < 2 * j + 1 {
            break;
        }
        let (t0, y0) = &returns[n - 1];
        let (t1, y1) = &returns[n - 1 - j];
        let (t2, y2) = &returns[n - 1 - 2 * j];
        if dist(y0, y1) < RETURN_MATCH && dist(y1, y2) < RETURN_MATCH {
            let (p1, p2) = (t0 - t1, t1 - t2);
            if (p1 - p2).abs() < PERIOD_MATCH.max(1e-4 * p1) {
                return Some((p1, *y0));
            }
        }
    }
    None
}

/// Integrates until the trajectory settles on an equilibrium or a periodic
/// orbit, or the budget runs out.
pub fn classify_attractor(initial: &State, p: &ModelParams, opts: &ClassifyOptions) -> Result<AttractorLabel> {
    let equilibria = all_equilibria(p)?;
    classify_with(initial, p, opts, &equilibria)
}

fn classify_with(
    initial: &State,
    p: &ModelParams,
    opts: &ClassifyOptions,
    equilibria: &[Equilibrium],
) -> Result<AttractorLabel> {
    check_initial(initial, opts.tol)?;
    let ode = OdeOptions::with_tol(opts.tol).nonnegative(3);
    let mut phase = Phase::Warmup;
    let mut label: Option<AttractorLabel> = None;
    let f = field(p);

    let result = integrate_with(&f, 0.0, &initial.to_array(), opts.budget, &ode, |step| {
        let y = [step.y[0], step.y[1], step.y[2]];
        let mut v = [0.0; 3];
        f(step.t, &y, &mut v);
        let speed = dot(&v, &v).sqrt();
        if speed < VELOCITY_TOL {
            let here = State::from_slice(&y);
            if let Some((index, eq)) = equilibria
                .iter()
                .enumerate()
                .find(|(_, e)| e.state.distance(&here) < EQUILIBRIUM_MATCH)
            {
                label = Some(AttractorLabel {
                    kind: AttractorKind::Equilibrium { index, state: eq.state },
                    transient: step.t,
                });
                return ControlFlow::Break(());
            }
        }
        match &mut phase {
            Phase::Warmup => {
                if step.t >= opts.warmup {
                    phase = Phase::Averaging { start: step.t, sum: [0.0; 3], normal: v };
                }
            }
            Phase::Averaging { start, sum, normal } => {
                let h = step.h();
                for k in 0..3 {
                    sum[k] += 0.5 * h * (step.y_old[k] + step.y[k]);
                }
                let elapsed = step.t - *start;
                if elapsed >= opts.window {
                    let point = sum.map(|s| s / elapsed);
                    let n = *normal;
                    phase = Phase::Section { placed: step.t, point, normal: n, returns: Vec::new() };
                }
            }
            Phase::Section { placed, point, normal, returns } => {
                let before = dot(
                    &[step.y_old[0] - point[0], step.y_old[1] - point[1], step.y_old[2] - point[2]],
                    normal,
                );
                let after = dot(&[y[0] - point[0], y[1] - point[1], y[2] - point[2]], normal);
                if before < 0.0 && after >= 0.0 {
                    returns.push(crossing(step, point, normal));
                    if let Some((period, reference)) = detect_period(returns) {
                        label = Some(AttractorLabel {
                            kind: AttractorKind::Cycle { period, reference: State::from_slice(&reference) },
                            transient: step.t,
                        });
                        return ControlFlow::Break(());
                    }
                }
                if step.t - *placed > opts.replace_after {
                    phase = Phase::Averaging { start: step.t, sum: [0.0; 3], normal: v };
                }
            }
        }
        ControlFlow::Continue(())
    });

    match result {
        Ok(_) => Ok(label.unwrap_or(AttractorLabel { kind: AttractorKind::Unresolved, transient: opts.budget })),
        // a failing integration is reported as unresolved rather than as an error
        Err(Error::StepUnderflow { t, .. }) => Ok(AttractorLabel { kind: AttractorKind::Unresolved, transient: t }),
        Err(e) => Err(e),
    }
}

/// Initial-condition grid over `(x1, x2)` at fixed substrate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub s: f64,
    pub x1: (f64, f64),
    pub x2: (f64, f64),
    pub n1: usize,
    pub n2: usize,
}

impl GridSpec {
    /// 21 x 21 cell centers at `S = S_in / 2`, covering the square of
    /// `(x1, x2)` that fits in the absorbing simplex.
    pub fn default_for(p: &ModelParams) -> Self {
        let s = 0.5 * p.s_in();
        let side = 0.5 * (crate::model::omega_bound(p) - s);
        GridSpec { s, x1: (0.0, side), x2: (0.0, side), n1: 21, n2: 21 }
    }

    pub fn cell_centers(&self) -> Vec<State> {
        let mut out = Vec::with_capacity(self.n1 * self.n2);
        for j in 0..self.n2 {
            let x2 = self.x2.0 + (j as f64 + 0.5) * (self.x2.1 - self.x2.0) / self.n2 as f64;
            for i in 0..self.n1 {
                let x1 = self.x1.0 + (i as f64 + 0.5) * (self.x1.1 - self.x1.0) / self.n1 as f64;
                out.push(State::new(self.s, x1, x2));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasinCell {
    pub initial: State,
    pub label: AttractorLabel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasinMap {
    pub grid: GridSpec,
    pub cells: Vec<BasinCell>,
}

impl BasinMap {
    pub fn labels(&self) -> Vec<AttractorLabel> {
        self.cells.iter().map(|c| c.label.clone()).collect()
    }

    pub fn distinct(&self, period_rtol: f64) -> Vec<AttractorLabel> {
        distinct_attractors(&self.labels(), period_rtol)
    }
}

/// Classifies every cell center of `grid`; cells run in parallel and the
/// result is in row-major order (x1 fastest).
pub fn basin_map(grid: &GridSpec, p: &ModelParams, opts: &ClassifyOptions) -> Result<BasinMap> {
    let equilibria = all_equilibria(p)?;
    let bound = crate::model::omega_bound(p);
    let starts = grid.cell_centers();
    if let Some(bad) = starts.iter().find(|s| !s.in_omega(p, 0.0)) {
        return Err(Error::Domain(format!("grid point {bad:?} lies outside the simplex S + x1 + x2 <= {bound}")));
    }
    let cells = starts
        .par_iter()
        .map(|x0| classify_with(x0, p, opts, &equilibria).map(|label| BasinCell { initial: *x0, label }))
        .collect::<Result<Vec<_>>>()?;
    Ok(BasinMap { grid: *grid, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::find_coexistence;

    fn at(s_in: f64, d: f64) -> ModelParams {
        ModelParams::default().with_operating(s_in, d).unwrap()
    }

    #[test]
    fn washout_is_stationary() {
        let p = at(3.0, 0.2);
        let tr = integrate(&State::washout(&p), &p, 100.0, 1e-10).unwrap();
        for s in &tr.states {
            assert_eq!(*s, State::washout(&p));
        }
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rejects_bad_input() {
        let p = at(3.0, 0.2);
        assert!(integrate(&State::new(-1.0, 0.1, 0.1), &p, 1.0, 1e-8).is_err());
        assert!(integrate(&State::new(1.0, 0.1, 0.1), &p, 1.0, 0.0).is_err());
    }

    #[test]
    fn sampled_grid_is_uniform() {
        let p = at(3.0, 0.2);
        let tr = integrate_sampled(&State::new(1.0, 0.5, 0.5), &p, 10.0, 1e-9, Some(0.5)).unwrap();
        assert_eq!(tr.len(), 21);
        assert!((tr.times[20] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn near_washout_goes_to_washout() {
        let p = at(3.2324, 0.2);
        let l = classify_attractor(&State::new(3.0, 0.01, 0.01), &p, &ClassifyOptions::default()).unwrap();
        assert!(matches!(l.kind, AttractorKind::Equilibrium { index: 0, .. }), "{l:?}");
    }

    #[test]
    fn stable_coexistence_is_found() {
        // first coexistence equilibrium is LES here
        let p = at(3.5, 0.195);
        let eq = &find_coexistence(&p).unwrap()[0];
        assert!(eq.stability.is_stable());
        let x0 = State::new(eq.state.s + 0.01, eq.state.x1 - 0.01, eq.state.x2 + 0.01);
        let l = classify_attractor(&x0, &p, &ClassifyOptions::default()).unwrap();
        assert!(matches!(l.kind, AttractorKind::Equilibrium { index: 1, .. }), "{l:?}");
    }

    #[test]
    fn stable_cycle_past_hopf() {
        // between the homoclinic and the Hopf point the C1 cycle attracts
        let p = at(3.285, 0.195);
        let eq = &find_coexistence(&p).unwrap()[0];
        let x0 = State::new(eq.state.s, eq.state.x1 + 0.02, eq.state.x2);
        let l = classify_attractor(&x0, &p, &ClassifyOptions::default()).unwrap();
        let period = l.period().expect("cycle");
        assert!(period > 5.0 && period < 30.0, "{period}");
    }
}
