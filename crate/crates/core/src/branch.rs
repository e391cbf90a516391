//! Continuation of coexistence equilibria in one operating parameter, with
//! fold (LP) and Hopf (H) detection.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::continuation::{locate_zero, ContPoint, ContinuationProblem, StepPolicy, Stepper};
use crate::equilibria::{polish_coexistence, reduced_jacobian, reduced_residual, RouthHurwitz};
use crate::error::{Error, Result};
use crate::hopf::first_lyapunov;
use crate::model::{jacobian, ModelParams, OperatingParam, State};

/// Secant tolerance on the LP/H test functions.
pub const EVENT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    #[serde(rename = "LP")]
    Lp,
    #[serde(rename = "H")]
    Hopf,
    /// `c4 = 0` with a real pair of opposite sign.
    #[serde(rename = "NS")]
    NeutralSaddle,
    #[serde(rename = "LPC")]
    Lpc,
    #[serde(rename = "PD")]
    PeriodDoubling,
    #[serde(rename = "Hom")]
    Homoclinic,
    /// The continuation stalled at the minimum step.
    #[serde(rename = "terminated")]
    Terminated,
}

impl EventKind {
    pub fn label(self) -> &'static str {
        match self {
            EventKind::Lp => "LP",
            EventKind::Hopf => "H",
            EventKind::NeutralSaddle => "NS",
            EventKind::Lpc => "LPC",
            EventKind::PeriodDoubling => "PD",
            EventKind::Homoclinic => "Hom",
            EventKind::Terminated => "terminated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationEvent {
    pub kind: EventKind,
    pub free: OperatingParam,
    /// Value of the free parameter.
    pub param: f64,
    /// Value of the other operating parameter.
    pub fixed: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<State>,
    /// Test function value at the located point.
    pub test: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    /// Mesh of the cycle at the event.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycle: Option<Vec<State>>,
    /// Fit quality (R^2) of an extrapolated event.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_r2: Option<f64>,
    /// Arclength position on the branch or family.
    pub arclength: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl BifurcationEvent {
    pub fn new(kind: EventKind, free: OperatingParam, param: f64, fixed: f64) -> Self {
        BifurcationEvent {
            kind,
            free,
            param,
            fixed,
            state: None,
            test: 0.0,
            l1: None,
            omega: None,
            period: None,
            cycle: None,
            fit_r2: None,
            arclength: 0.0,
            note: None,
        }
    }

    /// Parameters at the event.
    pub fn params(&self, base: &ModelParams) -> ModelParams {
        base.at(0.0, 0.0)
            .with_param(self.free, self.param)
            .with_param(other(self.free), self.fixed)
    }
}

pub(crate) fn other(free: OperatingParam) -> OperatingParam {
    match free {
        OperatingParam::SIn => OperatingParam::D,
        OperatingParam::D => OperatingParam::SIn,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub arclength: f64,
    pub param: f64,
    pub state: State,
    /// Unit tangent in `(S, x1, x2, param)`.
    pub tangent: [f64; 4],
    pub rh: RouthHurwitz,
    /// Guard flags of the Hopf test.
    pub c2_positive: bool,
    pub c3_positive: bool,
    /// Real and imaginary part of the complex pair; without a pair,
    /// `mu` is the largest real eigenvalue and `nu = 0`.
    pub mu: f64,
    pub nu: f64,
    pub eigenvalues: [Complex64; 3],
}

impl BranchPoint {
    pub fn is_stable(&self) -> bool {
        self.rh.is_stable()
    }

    pub fn unstable_dimension(&self) -> usize {
        self.eigenvalues.iter().filter(|z| z.re > 0.0).count()
    }
}

pub(crate) fn spectrum(rh: &RouthHurwitz) -> ([Complex64; 3], f64, f64) {
    let ev = rh.roots();
    let (mu, nu) = match ev.iter().find(|z| z.im > 0.0) {
        Some(z) => (z.re, z.im),
        None => (ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max), 0.0),
    };
    (ev, mu, nu)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Branch {
    pub free: OperatingParam,
    pub fixed: f64,
    pub points: Vec<BranchPoint>,
    pub events: Vec<BifurcationEvent>,
}

impl Branch {
    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &BifurcationEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}

/// Equilibrium system in `(S, x1, x2, param)`.
pub(crate) struct EquilibriumProblem {
    pub base: ModelParams,
    pub free: OperatingParam,
    pub range: (f64, f64),
}

impl EquilibriumProblem {
    pub fn split(&self, y: &DVector<f64>) -> (Vector3<f64>, ModelParams) {
        (
            Vector3::new(y[0], y[1], y[2]),
            self.base.with_param(self.free, y[3]),
        )
    }

    pub fn rh(&self, y: &DVector<f64>) -> RouthHurwitz {
        let (x, p) = self.split(y);
        RouthHurwitz::from_matrix(&jacobian(&State::from_vector(&x), &p))
    }

    pub fn point(&self, c: &ContPoint) -> BranchPoint {
        let (x, _) = self.split(&c.y);
        let rh = self.rh(&c.y);
        let (eigenvalues, mu, nu) = spectrum(&rh);
        BranchPoint {
            arclength: c.arclength,
            param: c.y[3],
            state: State::from_vector(&x),
            tangent: [c.tangent[0], c.tangent[1], c.tangent[2], c.tangent[3]],
            rh,
            c2_positive: rh.c2 > 0.0,
            c3_positive: rh.c3 > 0.0,
            mu,
            nu,
            eigenvalues,
        }
    }
}

impl ContinuationProblem for EquilibriumProblem {
    fn dim(&self) -> usize {
        4
    }

    fn residual(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let (x, p) = self.split(y);
        let r = reduced_residual(&x, &p);
        Ok(DVector::from_column_slice(r.as_slice()))
    }

    fn jacobian(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (x, p) = self.split(y);
        let j = reduced_jacobian(&x, &p);
        let mut out = DMatrix::zeros(3, 4);
        out.view_mut((0, 0), (3, 3)).copy_from(&j);
        let col = match self.free {
            OperatingParam::SIn => Vector3::new(p.d(), 0.0, 0.0),
            OperatingParam::D => Vector3::new(
                p.s_in() - x[0] - p.removal.alpha[0] * x[1] - p.removal.alpha[1] * x[2],
                -p.removal.alpha[0],
                -p.removal.alpha[1],
            ),
        };
        out.set_column(3, &col);
        Ok(out)
    }

    fn admissible(&self, y: &DVector<f64>) -> bool {
        y[0] > 0.0 && y[1] > 0.0 && y[2] > 0.0 && y[3] > 0.0 && y[3] >= self.range.0 && y[3] <= self.range.1
    }
}

/// Default step policy of equilibrium continuation.
pub fn equilibrium_policy() -> StepPolicy {
    StepPolicy { h_init: 1e-3, h_min: 1e-6, h_max: 0.05, ..StepPolicy::default() }
}

/// Continues the coexistence equilibrium `start` (at the operating point
/// of `p`) in `free` over `range`, in both directions, and locates LP and
/// H events. Points are ordered by arclength.
pub fn continue_equilibria(
    start: &State,
    p: &ModelParams,
    free: OperatingParam,
    range: (f64, f64),
    policy: &StepPolicy,
) -> Result<Branch> {
    p.validate()?;
    let start = polish_coexistence(start, p)?;
    let sigma0 = p.get(free);
    if !(range.0 <= sigma0 && sigma0 <= range.1) {
        return Err(Error::InvalidParams(format!(
            "start value {sigma0} outside the range [{}, {}]",
            range.0, range.1
        )));
    }
    let mut problem = EquilibriumProblem { base: *p, free, range };
    let y0 = DVector::from_vec(vec![start.s, start.x1, start.x2, sigma0]);

    let mut halves = Vec::new();
    for dir in [1.0, -1.0] {
        let mut e = DVector::zeros(4);
        e[3] = dir;
        halves.push(run_direction(&mut problem, &y0, &e, policy)?);
    }
    let (fwd, bwd) = (halves.remove(0), halves.remove(0));

    // stitch: backward half reversed, then forward; arclength from the first point
    let total_back = bwd.points.last().map_or(0.0, |c| c.arclength);
    let mut points = Vec::new();
    for c in bwd.points.iter().rev() {
        let mut c = c.clone();
        c.arclength = total_back - c.arclength;
        c.tangent = -c.tangent;
        points.push(problem.point(&c));
    }
    for c in fwd.points.iter().skip(1) {
        let mut c = c.clone();
        c.arclength += total_back;
        points.push(problem.point(&c));
    }
    let mut events = Vec::new();
    for mut e in bwd.events {
        e.arclength = total_back - e.arclength;
        events.push(e);
    }
    for mut e in fwd.events {
        e.arclength += total_back;
        events.push(e);
    }
    events.sort_by(|a, b| a.arclength.partial_cmp(&b.arclength).unwrap());
    Ok(Branch { free, fixed: p.get(other(free)), points, events })
}

struct HalfBranch {
    points: Vec<ContPoint>,
    events: Vec<BifurcationEvent>,
}

fn run_direction(
    problem: &mut EquilibriumProblem,
    y0: &DVector<f64>,
    dir: &DVector<f64>,
    policy: &StepPolicy,
) -> Result<HalfBranch> {
    let free = problem.free;
    let fixed = problem.base.get(other(free));
    let mut points = Vec::new();
    let mut events = Vec::new();
    let check = EquilibriumProblem { base: problem.base, free, range: problem.range };
    let mut stepper = Stepper::new(problem, y0.clone(), dir, *policy)?;
    points.push(stepper.current.clone());
    for _ in 0..policy.max_points {
        let prev = stepper.current.clone();
        let next = match stepper.step() {
            Ok(n) => n,
            Err(e) => {
                let mut ev = BifurcationEvent::new(EventKind::Terminated, free, prev.y[3], fixed);
                ev.state = Some(State::new(prev.y[0], prev.y[1], prev.y[2]));
                ev.arclength = prev.arclength;
                ev.note = Some(e.to_string());
                events.push(ev);
                break;
            }
        };
        if !check.admissible(&next.y) {
            break;
        }
        events.extend(detect_events(&check, &prev, &next, policy));
        stepper.commit(next.clone());
        points.push(next);
    }
    Ok(HalfBranch { points, events })
}

fn detect_events(
    problem: &EquilibriumProblem,
    prev: &ContPoint,
    next: &ContPoint,
    policy: &StepPolicy,
) -> Vec<BifurcationEvent> {
    let (r0, r1) = (problem.rh(&prev.y), problem.rh(&next.y));
    let mut out = Vec::new();
    let fixed = problem.base.get(other(problem.free));
    if (r0.c3 > 0.0) != (r1.c3 > 0.0) {
        let located = locate_zero(problem, prev, next, |c| Ok(problem.rh(&c.y).c3), EVENT_TOL, policy);
        out.push(make_event(problem, EventKind::Lp, located, prev, fixed, |rh| rh.c3));
    }
    if (r0.c4 > 0.0) != (r1.c4 > 0.0) {
        let located = locate_zero(problem, prev, next, |c| Ok(problem.rh(&c.y).c4), EVENT_TOL, policy);
        let mut ev = make_event(problem, EventKind::Hopf, located, prev, fixed, |rh| rh.c4);
        if let Some(x) = ev.state {
            let p = ev.params(&problem.base);
            let rh = RouthHurwitz::from_matrix(&jacobian(&x, &p));
            if rh.c2 > 0.0 && rh.c3 > 0.0 {
                let omega = rh.c2.sqrt();
                ev.omega = Some(omega);
                match first_lyapunov(&x, &p, omega) {
                    Ok(l1) => ev.l1 = Some(l1),
                    Err(e) => ev.note = Some(e.to_string()),
                }
            } else {
                ev.kind = EventKind::NeutralSaddle;
            }
        }
        out.push(ev);
    }
    out
}

fn make_event(
    problem: &EquilibriumProblem,
    kind: EventKind,
    located: Result<ContPoint>,
    fallback: &ContPoint,
    fixed: f64,
    test: impl Fn(&RouthHurwitz) -> f64,
) -> BifurcationEvent {
    match located {
        Ok(c) => {
            let mut ev = BifurcationEvent::new(kind, problem.free, c.y[3], fixed);
            ev.state = Some(State::new(c.y[0], c.y[1], c.y[2]));
            ev.test = test(&problem.rh(&c.y));
            ev.arclength = c.arclength;
            ev
        }
        Err(e) => {
            let mut ev = BifurcationEvent::new(kind, problem.free, fallback.y[3], fixed);
            ev.state = Some(State::new(fallback.y[0], fallback.y[1], fallback.y[2]));
            ev.test = test(&problem.rh(&fallback.y));
            ev.arclength = fallback.arclength;
            ev.note = Some(format!("localization failed: {e}"));
            ev
        }
    }
}

/// Finite-difference slope of the real part of the complex pair across a
/// Hopf event, with the stencil halved for a consistency check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transversality {
    pub slope: f64,
    pub slope_half_step: f64,
    pub delta: f64,
}

impl Transversality {
    pub fn is_positive(&self) -> bool {
        self.slope > 0.0
    }

    /// Relative change of the slope when the stencil is halved.
    pub fn richardson_gap(&self) -> f64 {
        (self.slope - self.slope_half_step).abs() / self.slope.abs().max(f64::MIN_POSITIVE)
    }
}

/// Default stencil half-width of [`transversality`].
pub const TRANSVERSALITY_DELTA: f64 = 1e-4;

pub fn transversality(event: &BifurcationEvent, p: &ModelParams, delta: f64) -> Result<Transversality> {
    let x = event
        .state
        .ok_or_else(|| Error::InvalidParams("event carries no equilibrium state".into()))?;
    let mu_at = |sigma: f64| -> Result<f64> {
        let q = event.params(p).with_param(event.free, sigma);
        q.validate()?;
        let s = polish_coexistence(&x, &q)?;
        let rh = RouthHurwitz::from_matrix(&jacobian(&s, &q));
        let (_, mu, nu) = spectrum(&rh);
        if nu > 0.0 {
            Ok(mu)
        } else {
            Err(Error::IllConditioned("no complex pair next to the Hopf point".into()))
        }
    };
    let slope = |d: f64| -> Result<f64> { Ok((mu_at(event.param + d)? - mu_at(event.param - d)?) / (2.0 * d)) };
    Ok(Transversality { slope: slope(delta)?, slope_half_step: slope(0.5 * delta)?, delta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::find_coexistence;

    fn branch_at(d: f64, s_in: f64) -> Branch {
        let p = ModelParams::default().with_operating(s_in, d).unwrap();
        let eq = find_coexistence(&p).unwrap();
        continue_equilibria(&eq[0].state, &p, OperatingParam::SIn, (0.5, 5.0), &equilibrium_policy()).unwrap()
    }

    #[test]
    fn fold_and_hopf_at_d_02() {
        let b = branch_at(0.2, 3.0);
        let lp: Vec<_> = b.events_of(EventKind::Lp).collect();
        assert_eq!(lp.len(), 1, "{:?}", b.events);
        assert!((lp[0].param - 2.8504).abs() < 1e-3, "{}", lp[0].param);
        let h: Vec<_> = b.events_of(EventKind::Hopf).collect();
        assert_eq!(h.len(), 1, "{:?}", b.events);
        assert!((h[0].param - 3.2381).abs() < 1e-3, "{}", h[0].param);
        assert!(h[0].l1.unwrap() < 0.0);
        let t = transversality(h[0], &ModelParams::default(), TRANSVERSALITY_DELTA).unwrap();
        // the pair leaves the right half-plane as S_in grows: a nonzero, negative slope
        assert!(t.slope < -0.1 && t.richardson_gap() < 0.05, "{t:?}");
    }

    #[test]
    fn branch_points_are_equilibria() {
        let b = branch_at(0.2, 3.0);
        assert!(b.points.len() > 10);
        let base = ModelParams::default();
        for pt in &b.points {
            let q = base.with_param(OperatingParam::SIn, pt.param);
            assert!(reduced_residual(&pt.state.to_vector(), &q).amax() < 1e-10);
            let n: f64 = pt.tangent.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert!(b.points.windows(2).all(|w| w[1].arclength > w[0].arclength));
    }

    #[test]
    fn no_mortality_fold() {
        let p = ModelParams::no_mortality().with_operating(0.3, 0.2).unwrap();
        let eq = find_coexistence(&p).unwrap();
        assert_eq!(eq.len(), 2);
        let b = continue_equilibria(&eq[0].state, &p, OperatingParam::SIn, (0.01, 1.0), &equilibrium_policy()).unwrap();
        let lp: Vec<_> = b.events_of(EventKind::Lp).collect();
        assert_eq!(lp.len(), 1);
        assert!((lp[0].param - 0.1687).abs() < 5e-4, "{}", lp[0].param);
    }
}
