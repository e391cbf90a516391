//! Periodic orbits by multiple shooting: seeding at a Hopf point,
//! continuation in one operating parameter, Floquet multipliers and the
//! cycle events (LPC, PD, homoclinic period blow-up).

use std::ops::ControlFlow;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::branch::{other, BifurcationEvent, EventKind};
use crate::continuation::{locate_zero, weighted_dot, ContPoint, ContinuationProblem, StepPolicy, Stepper};
use crate::equilibria::{polish_coexistence, RouthHurwitz};
use crate::error::{Error, Result};
use crate::hopf::center_vectors;
use crate::model::{divergence, jacobian, rhs, rhs_param_derivative, ModelParams, OperatingParam, State};
use crate::ode::{integrate_to, integrate_with, OdeOptions};

/// Number of shooting segments.
pub const DEFAULT_MESH: usize = 20;
/// Relative tolerance of every segment integration.
pub const SEGMENT_TOL: f64 = 1e-11;
/// Default seed radius on the center eigenplane.
pub const DEFAULT_SEED_RADIUS: f64 = 1e-3;
/// Period above which the homoclinic fit is attempted.
pub const DEFAULT_T_TRIGGER: f64 = 100.0;
/// Points used by the homoclinic fit.
pub const HOM_FIT_POINTS: usize = 8;
const HOM_MIN_R2: f64 = 0.99;
/// Arclength weight of the period.
const PERIOD_WEIGHT: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CycleStability {
    #[serde(rename = "stable")]
    Stable,
    #[serde(rename = "unstable")]
    Unstable,
}

impl CycleStability {
    pub fn letter(self) -> char {
        match self {
            CycleStability::Stable => 'S',
            CycleStability::Unstable => 'U',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCycle {
    pub free: OperatingParam,
    pub param: f64,
    pub fixed: f64,
    pub period: f64,
    /// States at `t = k T / m`, `k = 0..m`.
    pub nodes: Vec<State>,
    /// Trivial multiplier first, then the other two.
    pub multipliers: [Complex64; 3],
    pub stability: CycleStability,
    /// Phase anchor and the field there.
    pub anchor: State,
    pub anchor_velocity: State,
    pub arclength: f64,
}

impl LimitCycle {
    /// Unconverged cycle from a stored mesh, for [`refine_cycle`].
    pub fn guess(free: OperatingParam, param: f64, fixed: f64, period: f64, nodes: Vec<State>, base: &ModelParams) -> Result<Self> {
        let first = *nodes
            .first()
            .ok_or_else(|| Error::InvalidParams("cycle guess without nodes".into()))?;
        let p = base.with_param(free, param).with_param(other(free), fixed);
        Ok(LimitCycle {
            free,
            param,
            fixed,
            period,
            nodes,
            multipliers: [Complex64::new(1.0, 0.0); 3],
            stability: CycleStability::Stable,
            anchor: first,
            anchor_velocity: rhs(&first, &p),
            arclength: 0.0,
        })
    }

    pub fn params(&self, base: &ModelParams) -> ModelParams {
        base.with_param(self.free, self.param).with_param(other(self.free), self.fixed)
    }

    pub fn mesh_size(&self) -> usize {
        self.nodes.len()
    }

    /// Nontrivial multipliers.
    pub fn nontrivial(&self) -> [Complex64; 2] {
        [self.multipliers[1], self.multipliers[2]]
    }

    /// `|Phi_T(node_0) - node_0|` from one integration over the full period.
    pub fn closure_residual(&self, base: &ModelParams) -> Result<f64> {
        let p = self.params(base);
        let x0 = self.nodes[0];
        let end = flow(&p, &x0.to_array(), self.period)?;
        Ok(State::from_slice(&end).distance(&x0))
    }

    /// Orbit sampled at `n` equally spaced times over one period.
    pub fn orbit(&self, base: &ModelParams, n: usize) -> Result<Vec<State>> {
        let p = self.params(base);
        let opts = OdeOptions::with_tol(SEGMENT_TOL);
        let mut out = Vec::with_capacity(n);
        let dt = self.period / n as f64;
        let mut next = 0usize;
        integrate_with(field(&p), 0.0, &self.nodes[0].to_array(), self.period, &opts, |step| {
            let mut buf = [0.0; 3];
            while next < n && next as f64 * dt <= step.t {
                step.eval(next as f64 * dt, &mut buf);
                out.push(State::from_slice(&buf));
                next += 1;
            }
            ControlFlow::Continue(())
        })?;
        Ok(out)
    }

    /// `(prod of multipliers, exp of the integrated divergence)`; the two
    /// agree by Liouville's formula. The divergence is integrated from every
    /// node over one segment, since a single shot over a whole period drifts
    /// off strongly unstable cycles.
    pub fn liouville(&self, base: &ModelParams) -> Result<(f64, f64)> {
        let p = self.params(base);
        let opts = OdeOptions::with_tol(SEGMENT_TOL);
        let tau = self.period / self.nodes.len() as f64;
        let mut integral = 0.0;
        for node in &self.nodes {
            let mut y0 = node.to_array().to_vec();
            y0.push(0.0);
            let (y, _) = integrate_to(
                |_, y: &[f64], dy: &mut [f64]| {
                    let x = State::from_slice(y);
                    let f = rhs(&x, &p);
                    dy[0] = f.s;
                    dy[1] = f.x1;
                    dy[2] = f.x2;
                    dy[3] = divergence(&x, &p);
                },
                0.0,
                &y0,
                tau,
                &opts,
            )?;
            integral += y[3];
        }
        let prod = self.multipliers.iter().fold(Complex64::new(1.0, 0.0), |a, b| a * b);
        Ok((prod.re, integral.exp()))
    }
}

fn field(p: &ModelParams) -> impl Fn(f64, &[f64], &mut [f64]) + '_ {
    move |_, y, dy| {
        let f = rhs(&State::from_slice(y), p);
        dy[0] = f.s;
        dy[1] = f.x1;
        dy[2] = f.x2;
    }
}

fn flow(p: &ModelParams, x: &[f64; 3], tau: f64) -> Result<[f64; 3]> {
    let (y, _) = integrate_to(field(p), 0.0, x, tau, &OdeOptions::with_tol(SEGMENT_TOL))?;
    Ok([y[0], y[1], y[2]])
}

/// Flow, state transition matrix and parameter sensitivity over `tau`.
fn flow_variational(p: &ModelParams, free: OperatingParam, x: &[f64; 3], tau: f64) -> Result<([f64; 3], Matrix3<f64>, Vector3<f64>)> {
    let mut y0 = vec![0.0; 15];
    y0[..3].copy_from_slice(x);
    y0[3] = 1.0;
    y0[7] = 1.0;
    y0[11] = 1.0;
    let f = |_: f64, y: &[f64], dy: &mut [f64]| {
        let s = State::from_slice(y);
        let fx = rhs(&s, p);
        let j = jacobian(&s, p);
        dy[0] = fx.s;
        dy[1] = fx.x1;
        dy[2] = fx.x2;
        let phi = Matrix3::from_column_slice(&y[3..12]);
        let dphi = j * phi;
        dy[3..12].copy_from_slice(dphi.as_slice());
        let w = Vector3::new(y[12], y[13], y[14]);
        let dw = j * w + rhs_param_derivative(&s, p, free);
        dy[12..15].copy_from_slice(dw.as_slice());
    };
    let (y, _) = integrate_to(f, 0.0, &y0, tau, &OdeOptions::with_tol(SEGMENT_TOL))?;
    Ok((
        [y[0], y[1], y[2]],
        Matrix3::from_column_slice(&y[3..12]),
        Vector3::new(y[12], y[13], y[14]),
    ))
}

/// Multiple-shooting system in `(u_0, ..., u_{m-1}, T, param)`.
pub(crate) struct ShootingProblem {
    base: ModelParams,
    free: OperatingParam,
    m: usize,
    anchor: Vector3<f64>,
    anchor_velocity: Vector3<f64>,
    range: (f64, f64),
}

impl ShootingProblem {
    fn new(base: ModelParams, free: OperatingParam, m: usize, range: (f64, f64), y: &DVector<f64>) -> Self {
        let mut sp = ShootingProblem {
            base,
            free,
            m,
            anchor: Vector3::zeros(),
            anchor_velocity: Vector3::zeros(),
            range,
        };
        sp.reanchor(y);
        sp
    }

    fn params(&self, y: &DVector<f64>) -> ModelParams {
        self.base.with_param(self.free, y[3 * self.m + 1])
    }

    fn node(&self, y: &DVector<f64>, k: usize) -> [f64; 3] {
        [y[3 * k], y[3 * k + 1], y[3 * k + 2]]
    }

    fn period(&self, y: &DVector<f64>) -> f64 {
        y[3 * self.m]
    }

    fn reanchor(&mut self, y: &DVector<f64>) {
        let u0 = self.node(y, 0);
        let p = self.params(y);
        self.anchor = Vector3::from(u0);
        self.anchor_velocity = rhs(&State::from_slice(&u0), &p).to_vector();
    }

    fn segments(&self, y: &DVector<f64>) -> Result<Vec<([f64; 3], Matrix3<f64>, Vector3<f64>)>> {
        let p = self.params(y);
        let tau = self.period(y) / self.m as f64;
        (0..self.m)
            .into_par_iter()
            .map(|k| flow_variational(&p, self.free, &self.node(y, k), tau))
            .collect()
    }

    /// Floquet multipliers from the segment transition matrices.
    fn multipliers(&self, y: &DVector<f64>) -> Result<[Complex64; 3]> {
        let segs = self.segments(y)?;
        let mono = segs.iter().fold(Matrix3::identity(), |acc, (_, mk, _)| mk * acc);
        let det: f64 = segs.iter().map(|(_, mk, _)| mk.determinant()).product();
        let p = self.params(y);
        let velocity = |k: usize| rhs(&State::from_slice(&self.node(y, k % self.m)), &p).to_vector();
        // the flow carries the velocity at one node onto the velocity at the
        // next; chaining the per-segment stretch factors keeps the trivial
        // multiplier free of the large one
        let trivial: f64 = segs
            .iter()
            .enumerate()
            .map(|(k, (_, mk, _))| {
                let next = velocity(k + 1);
                next.dot(&(mk * velocity(k))) / next.norm_squared()
            })
            .product();
        Ok(deflated_multipliers(&mono, det, trivial, &velocity(0)))
    }

    fn cycle(&self, c: &ContPoint) -> Result<LimitCycle> {
        let y = &c.y;
        let multipliers = self.multipliers(y)?;
        let stable = multipliers[1].norm() < 1.0 && multipliers[2].norm() < 1.0;
        let p = self.params(y);
        let u0 = State::from_slice(&self.node(y, 0));
        Ok(LimitCycle {
            free: self.free,
            param: y[3 * self.m + 1],
            fixed: self.base.get(other(self.free)),
            period: self.period(y),
            nodes: (0..self.m).map(|k| State::from_slice(&self.node(y, k))).collect(),
            multipliers,
            stability: if stable { CycleStability::Stable } else { CycleStability::Unstable },
            anchor: u0,
            anchor_velocity: rhs(&u0, &p),
            arclength: c.arclength,
        })
    }
}

impl ContinuationProblem for ShootingProblem {
    fn dim(&self) -> usize {
        3 * self.m + 2
    }

    fn residual(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let p = self.params(y);
        let tau = self.period(y) / self.m as f64;
        let ends = (0..self.m)
            .into_par_iter()
            .map(|k| flow(&p, &self.node(y, k), tau))
            .collect::<Result<Vec<_>>>()?;
        let mut r = DVector::zeros(3 * self.m + 1);
        for (k, e) in ends.iter().enumerate() {
            let next = self.node(y, (k + 1) % self.m);
            for i in 0..3 {
                r[3 * k + i] = e[i] - next[i];
            }
        }
        let u0 = Vector3::from(self.node(y, 0));
        r[3 * self.m] = self.anchor_velocity.dot(&(u0 - self.anchor));
        Ok(r)
    }

    fn jacobian(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        let m = self.m;
        let p = self.params(y);
        let segs = self.segments(y)?;
        let mut j = DMatrix::zeros(3 * m + 1, 3 * m + 2);
        for (k, (end, mk, wk)) in segs.iter().enumerate() {
            j.view_mut((3 * k, 3 * k), (3, 3)).copy_from(mk);
            let nk = (k + 1) % m;
            for i in 0..3 {
                j[(3 * k + i, 3 * nk + i)] -= 1.0;
            }
            let fe = rhs(&State::from_slice(end), &p).to_vector() / m as f64;
            for i in 0..3 {
                j[(3 * k + i, 3 * m)] = fe[i];
                j[(3 * k + i, 3 * m + 1)] = wk[i];
            }
        }
        for i in 0..3 {
            j[(3 * m, i)] = self.anchor_velocity[i];
        }
        Ok(j)
    }

    fn weights(&self) -> DVector<f64> {
        let mut w = DVector::from_element(3 * self.m + 2, 1.0 / self.m as f64);
        w[3 * self.m] = PERIOD_WEIGHT;
        w[3 * self.m + 1] = 1.0;
        w
    }

    fn accept(&mut self, y: &DVector<f64>) {
        self.reanchor(y);
    }

    fn admissible(&self, y: &DVector<f64>) -> bool {
        let sigma = y[3 * self.m + 1];
        self.period(y) > 0.0 && sigma > 0.0 && sigma >= self.range.0 && sigma <= self.range.1
    }
}

/// Multipliers of a monodromy matrix whose trivial eigenvector `v` is
/// known. The matrix is restricted to the complement of `v`; the 2x2 block
/// gives the nontrivial pair from its trace and from `det / trivial`, with
/// `det` and `trivial` both accumulated segment by segment. Taking the roots
/// of the full characteristic cubic instead loses the small and trivial
/// multipliers once one multiplier is large.
fn deflated_multipliers(mono: &Matrix3<f64>, det: f64, trivial: f64, v: &Vector3<f64>) -> [Complex64; 3] {
    let v1 = v.normalize();
    let k = v1.iamin();
    let mut e = Vector3::zeros();
    e[k] = 1.0;
    let v2 = (e - v1 * v1.dot(&e)).normalize();
    let v3 = v1.cross(&v2);
    let tr = v2.dot(&(mono * v2)) + v3.dot(&(mono * v3));
    let pair = det / trivial;
    let disc = tr * tr - 4.0 * pair;
    let (a, b) = if disc >= 0.0 {
        let big = 0.5 * (tr + tr.signum() * disc.sqrt());
        let small = if big != 0.0 { pair / big } else { 0.0 };
        (Complex64::new(big, 0.0), Complex64::new(small, 0.0))
    } else {
        let im = 0.5 * (-disc).sqrt();
        (Complex64::new(0.5 * tr, im), Complex64::new(0.5 * tr, -im))
    };
    [Complex64::new(trivial, 0.0), a, b]
}

/// Trivial multiplier (closest to 1) first.
#[cfg(test)]
fn sort_multipliers(mut mu: [Complex64; 3]) -> [Complex64; 3] {
    let dist = |z: &Complex64| (z - Complex64::new(1.0, 0.0)).norm();
    let k = (0..3).min_by(|&a, &b| dist(&mu[a]).partial_cmp(&dist(&mu[b])).unwrap()).unwrap();
    mu.swap(0, k);
    if mu[1].norm() < mu[2].norm() {
        mu.swap(1, 2);
    }
    mu
}

fn to_vector(c: &LimitCycle) -> DVector<f64> {
    let m = c.nodes.len();
    let mut y = DVector::zeros(3 * m + 2);
    for (k, n) in c.nodes.iter().enumerate() {
        y[3 * k] = n.s;
        y[3 * k + 1] = n.x1;
        y[3 * k + 2] = n.x2;
    }
    y[3 * m] = c.period;
    y[3 * m + 1] = c.param;
    y
}

pub fn cycle_policy() -> StepPolicy {
    StepPolicy {
        h_init: 1e-3,
        h_min: 1e-7,
        h_max: 0.02,
        max_newton: 10,
        step_tol: 1e-9,
        residual_tol: 1e-10,
        max_points: 20_000,
        ..StepPolicy::default()
    }
}

/// Floquet multipliers of a converged cycle, trivial one first.
pub fn floquet(cycle: &LimitCycle, base: &ModelParams) -> Result<[Complex64; 3]> {
    let y = to_vector(cycle);
    let sp = ShootingProblem::new(cycle.params(base), cycle.free, cycle.nodes.len(), (f64::MIN, f64::MAX), &y);
    sp.multipliers(&y)
}

/// Converges a cycle at fixed parameter from a nearby mesh guess.
pub fn refine_cycle(guess: &LimitCycle, base: &ModelParams) -> Result<LimitCycle> {
    let y0 = to_vector(guess);
    let m = guess.nodes.len();
    let sp = ShootingProblem::new(guess.params(base), guess.free, m, (f64::MIN, f64::MAX), &y0);
    // pin the parameter through the arclength row: tangent = e_param
    let mut t = DVector::zeros(3 * m + 2);
    t[3 * m + 1] = 1.0;
    let policy = cycle_policy();
    let (y, _) = crate::continuation::correct(&sp, &y0, &y0, &t, &policy)?;
    let c = ContPoint { y, tangent: t, arclength: guess.arclength };
    sp.cycle(&c)
}

/// Seeds a cycle on the center eigenplane of a Hopf point and converges
/// it. On failure the radius is enlarged five-fold (three attempts).
pub fn cycle_from_hopf(event: &BifurcationEvent, base: &ModelParams, radius: f64) -> Result<LimitCycle> {
    if event.kind != EventKind::Hopf {
        return Err(Error::InvalidParams(format!("{} event is not a Hopf point", event.kind.label())));
    }
    let x = event
        .state
        .ok_or_else(|| Error::InvalidParams("Hopf event without state".into()))?;
    let p = event.params(base);
    let omega = event
        .omega
        .or_else(|| {
            let rh = RouthHurwitz::from_matrix(&jacobian(&x, &p));
            (rh.c2 > 0.0).then(|| rh.c2.sqrt())
        })
        .ok_or_else(|| Error::IllConditioned("no imaginary pair at the Hopf point".into()))?;
    let (q, _) = center_vectors(&jacobian(&x, &p), omega);
    let m = DEFAULT_MESH;
    let period = 2.0 * std::f64::consts::PI / omega;

    let mut h = radius;
    let mut last_err = None;
    for _ in 0..3 {
        let mut seed = DVector::zeros(3 * m + 2);
        let mut dir = DVector::zeros(3 * m + 2);
        for k in 0..m {
            let phase = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / m as f64);
            for i in 0..3 {
                let v = (q[i] * phase).re;
                seed[3 * k + i] = x.to_array()[i] + h * v;
                dir[3 * k + i] = v;
            }
        }
        seed[3 * m] = period;
        seed[3 * m + 1] = event.param;
        let sp = ShootingProblem::new(p, event.free, m, (f64::MIN, f64::MAX), &seed);
        let w = sp.weights();
        let nrm = weighted_dot(&w, &dir, &dir).sqrt();
        dir /= nrm;
        match crate::continuation::correct(&sp, &seed, &seed, &dir, &cycle_policy()) {
            Ok((y, _)) => {
                let c = ContPoint { y, tangent: dir, arclength: 0.0 };
                let cyc = sp.cycle(&c)?;
                let amp = cyc.nodes.iter().map(|n| n.distance(&x)).fold(0.0, f64::max);
                if amp > 0.1 * h {
                    return Ok(cyc);
                }
                last_err = Some(Error::NoConvergence("seed collapsed onto the equilibrium".into()));
            }
            Err(e) => last_err = Some(e),
        }
        h *= 5.0;
    }
    Err(last_err.unwrap_or_else(|| Error::NoConvergence("cycle seed failed".into())))
}

/// Whether the emerging side agrees with the sign of `l1`: a cycle born
/// at a supercritical point coexists with an unstable focus and vice versa.
pub fn onset_side_consistent(cycle: &LimitCycle, event: &BifurcationEvent, base: &ModelParams) -> Result<bool> {
    let l1 = event
        .l1
        .ok_or_else(|| Error::InvalidParams("Hopf event without l1".into()))?;
    let p = cycle.params(base);
    let x = polish_coexistence(&event.state.unwrap(), &p)?;
    let rh = RouthHurwitz::from_matrix(&jacobian(&x, &p));
    let mu = rh.roots().iter().find(|z| z.im > 0.0).map(|z| z.re).unwrap_or(f64::NAN);
    Ok((mu > 0.0) == (l1 < 0.0))
}

/// Initial direction of a family run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Direction {
    /// Growing amplitude (away from the Hopf point).
    Outward,
    /// Free parameter increasing (`+1`) or decreasing (`-1`).
    Param(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyOptions {
    pub policy: StepPolicy,
    pub direction: Direction,
    pub t_trigger: f64,
    /// Hard stop on the period.
    pub t_max: f64,
}

impl Default for FamilyOptions {
    fn default() -> Self {
        FamilyOptions {
            policy: cycle_policy(),
            direction: Direction::Outward,
            t_trigger: DEFAULT_T_TRIGGER,
            t_max: 4.0 * DEFAULT_T_TRIGGER,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleFamily {
    pub free: OperatingParam,
    pub fixed: f64,
    pub cycles: Vec<LimitCycle>,
    pub events: Vec<BifurcationEvent>,
    pub stop: String,
}

impl CycleFamily {
    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &BifurcationEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}

/// Continues `start` in its free parameter within `range`.
pub fn continue_cycles(
    start: &LimitCycle,
    base: &ModelParams,
    range: (f64, f64),
    opts: &FamilyOptions,
) -> Result<CycleFamily> {
    let y0 = to_vector(start);
    let m = start.nodes.len();
    let mut sp = ShootingProblem::new(start.params(base), start.free, m, range, &y0);
    let dir = match opts.direction {
        Direction::Param(s) => {
            let mut d = DVector::zeros(3 * m + 2);
            d[3 * m + 1] = s.signum();
            d
        }
        Direction::Outward => {
            let mean = start.nodes.iter().fold(Vector3::zeros(), |a, n| a + n.to_vector()) / m as f64;
            let mut d = DVector::zeros(3 * m + 2);
            for (k, n) in start.nodes.iter().enumerate() {
                let v = n.to_vector() - mean;
                for i in 0..3 {
                    d[3 * k + i] = v[i];
                }
            }
            d
        }
    };

    let free = start.free;
    let fixed = start.fixed;
    let policy = opts.policy;
    let mut cycles = vec![sp.cycle(&ContPoint { y: y0.clone(), tangent: dir.clone(), arclength: 0.0 })?];
    let mut events = Vec::new();
    let mut stepper = Stepper::new(&mut sp, y0, &dir, policy)?;
    let mut stop = "max points".to_string();
    let mut pd_prev = pd_test(&cycles[0]);
    let mut widest = spread(&cycles[0].nodes);

    for _ in 0..policy.max_points {
        let prev = stepper.current.clone();
        let next = match stepper.step() {
            Ok(n) => n,
            Err(e) => {
                let last = cycles.last().unwrap();
                let mut ev = BifurcationEvent::new(EventKind::Terminated, free, last.param, fixed);
                ev.period = Some(last.period);
                ev.arclength = last.arclength;
                ev.note = Some(e.to_string());
                events.push(ev);
                stop = format!("terminated: {e}");
                break;
            }
        };
        if !stepper.problem.admissible(&next.y) {
            stop = "left parameter range".into();
            break;
        }
        let cyc = match stepper.problem.cycle(&next) {
            Ok(c) => c,
            Err(e) => {
                stop = format!("monodromy failed: {e}");
                break;
            }
        };
        let sp_ref: &ShootingProblem = stepper.problem;
        widest = widest.max(spread(&cyc.nodes));
        let pidx = 3 * m + 1;
        if (prev.tangent[pidx] > 0.0) != (next.tangent[pidx] > 0.0) {
            let located = locate_zero(sp_ref, &prev, &next, |c| Ok(c.tangent[pidx]), 1e-12, &policy);
            let ev = cycle_event(sp_ref, EventKind::Lpc, located, &cyc);
            if ev.cycle.as_deref().is_some_and(|n| spread(n) < COLLAPSE_FRACTION * widest) {
                // the fold of the reflected family at a Hopf point
                stop = "reached a Hopf point".into();
                break;
            }
            events.push(ev);
        }
        let pd_next = pd_test(&cyc);
        if (pd_prev > 0.0) != (pd_next > 0.0) && has_real_near_minus_one(&cyc, cycles.last().unwrap()) {
            let located = locate_zero(
                sp_ref,
                &prev,
                &next,
                |c| Ok(pd_value(&sp_ref.multipliers(&c.y)?)),
                1e-10,
                &policy,
            );
            events.push(cycle_event(sp_ref, EventKind::PeriodDoubling, located, &cyc));
        }
        pd_prev = pd_next;
        let period = cyc.period;
        cycles.push(cyc);
        stepper.commit(next);

        if period > opts.t_trigger {
            let tail_start = cycles.len().saturating_sub(HOM_FIT_POINTS);
            let tail = &cycles[tail_start..];
            if tail.len() == HOM_FIT_POINTS && tail[0].period > opts.t_trigger {
                if let Ok(ev) = detect_homoclinic(tail) {
                    events.push(ev);
                    stop = "homoclinic".into();
                    break;
                }
            }
        }
        if period > opts.t_max {
            if let Ok(ev) = detect_homoclinic(&cycles[cycles.len().saturating_sub(HOM_FIT_POINTS)..]) {
                events.push(ev);
            }
            stop = "period limit".into();
            break;
        }
    }
    events.sort_by(|a, b| a.arclength.partial_cmp(&b.arclength).unwrap());
    Ok(CycleFamily { free, fixed, cycles, events, stop })
}

/// A fold whose cycle spreads less than this fraction of the widest cycle
/// seen is the turning point of a family shrinking into a Hopf point and
/// continuing as its reflection.
const COLLAPSE_FRACTION: f64 = 0.02;

fn spread(nodes: &[State]) -> f64 {
    let mean = nodes.iter().fold(Vector3::zeros(), |a, x| a + x.to_vector()) / nodes.len() as f64;
    nodes.iter().map(|x| (x.to_vector() - mean).norm()).fold(0.0, f64::max)
}

fn pd_test(c: &LimitCycle) -> f64 {
    pd_value(&c.multipliers)
}

/// `(1 + mu_2)(1 + mu_3)`: `det(M + I)` without the trivial factor.
fn pd_value(mu: &[Complex64; 3]) -> f64 {
    ((1.0 + mu[1]) * (1.0 + mu[2])).re
}

/// A sign change of `det(M + I)` is a PD only if a real multiplier sits
/// on the negative axis on one side.
fn has_real_near_minus_one(a: &LimitCycle, b: &LimitCycle) -> bool {
    a.multipliers
        .iter()
        .chain(b.multipliers.iter())
        .any(|z| z.im == 0.0 && z.re < 0.0)
}

fn cycle_event(sp: &ShootingProblem, kind: EventKind, located: Result<ContPoint>, fallback: &LimitCycle) -> BifurcationEvent {
    let (cyc, note) = match located.and_then(|c| sp.cycle(&c)) {
        Ok(c) => (c, None),
        Err(e) => (fallback.clone(), Some(format!("localization failed: {e}"))),
    };
    let mut ev = BifurcationEvent::new(kind, cyc.free, cyc.param, cyc.fixed);
    ev.period = Some(cyc.period);
    ev.state = Some(cyc.nodes[0]);
    ev.arclength = cyc.arclength;
    ev.test = match kind {
        EventKind::PeriodDoubling => pd_test(&cyc),
        _ => 0.0,
    };
    ev.cycle = Some(cyc.nodes.clone());
    ev.note = note;
    ev
}

/// Least-squares fit `T = a - b ln|sigma - sigma_hom|` to the tail of a
/// family whose period grows without bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomoclinicFit {
    pub sigma_hom: f64,
    pub a: f64,
    pub b: f64,
    pub r2: f64,
}

pub fn fit_homoclinic(params: &[f64], periods: &[f64]) -> Result<HomoclinicFit> {
    let n = params.len();
    if n < 4 || periods.len() != n {
        return Err(Error::InvalidParams("need at least four samples".into()));
    }
    if !periods.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::Localization("period tail is not monotone".into()));
    }
    let dir = (params[n - 1] - params[n - 2]).signum();
    if !params.windows(2).all(|w| (w[1] - w[0]) * dir > 0.0) {
        return Err(Error::Localization("parameter tail is not monotone".into()));
    }
    let last = params[n - 1];
    let span = (params[n - 1] - params[0]).abs();
    let mean_t = periods.iter().sum::<f64>() / n as f64;
    let sst: f64 = periods.iter().map(|t| (t - mean_t).powi(2)).sum();

    // linear fit in (a, b) for a given offset of sigma_hom past the last point
    let fit = |delta: f64| -> (f64, f64, f64) {
        let sigma_hom = last + dir * delta;
        let xs: Vec<f64> = params.iter().map(|s| -((sigma_hom - s) * dir).ln()).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(periods).map(|(x, t)| (x - mx) * (t - mean_t)).sum();
        let b = sxy / sxx;
        let a = mean_t - b * mx;
        let sse: f64 = xs.iter().zip(periods).map(|(x, t)| (t - a - b * x).powi(2)).sum();
        (a, b, sse)
    };
    // golden section on log10(delta)
    let floor = (last.abs() * 1e-15).max(1e-300);
    let (mut lo, mut hi) = (floor.log10(), (10.0 * span).max(floor * 10.0).log10());
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let obj = |z: f64| fit(10f64.powf(z)).2;
    let (mut c, mut d) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut fc, mut fd) = (obj(c), obj(d));
    for _ in 0..200 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = obj(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = obj(d);
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    let z = 0.5 * (lo + hi);
    let delta = 10f64.powf(z);
    let (a, b, sse) = fit(delta);
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { 0.0 };
    Ok(HomoclinicFit { sigma_hom: last + dir * delta, a, b, r2 })
}

/// Homoclinic event extrapolated from the tail of a family.
pub fn detect_homoclinic(tail: &[LimitCycle]) -> Result<BifurcationEvent> {
    let last = tail.last().ok_or_else(|| Error::InvalidParams("empty family".into()))?;
    let params: Vec<f64> = tail.iter().map(|c| c.param).collect();
    let periods: Vec<f64> = tail.iter().map(|c| c.period).collect();
    let fit = fit_homoclinic(&params, &periods)?;
    if fit.b <= 0.0 || fit.r2 < HOM_MIN_R2 {
        return Err(Error::Localization(format!(
            "poor homoclinic fit (b = {:.3e}, R^2 = {:.4})",
            fit.b, fit.r2
        )));
    }
    let mut ev = BifurcationEvent::new(EventKind::Homoclinic, last.free, fit.sigma_hom, last.fixed);
    ev.period = Some(last.period);
    ev.fit_r2 = Some(fit.r2);
    ev.arclength = last.arclength;
    ev.note = Some(format!("T = {:.6} - {:.6} ln|sigma - sigma_hom|", fit.a, fit.b));
    Ok(ev)
}

/// Period samples of one labeled part of a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodCurve {
    pub label: String,
    /// `(param, T, stable)`.
    pub samples: Vec<(f64, f64, bool)>,
}

/// Splits each family at its LPC events: the part before the first fold is
/// `C1`, between the first and second `C2`, after the second `C3`.
pub fn period_curve(families: &[CycleFamily]) -> Vec<PeriodCurve> {
    let mut out = Vec::new();
    for fam in families {
        let folds: Vec<f64> = fam.events_of(EventKind::Lpc).map(|e| e.arclength).collect();
        let mut curves: Vec<PeriodCurve> = Vec::new();
        for c in &fam.cycles {
            let idx = folds.iter().filter(|&&s| s <= c.arclength).count();
            while curves.len() <= idx {
                curves.push(PeriodCurve { label: format!("C{}", curves.len() + 1), samples: Vec::new() });
            }
            curves[idx].samples.push((c.param, c.period, c.stability == CycleStability::Stable));
        }
        out.extend(curves.into_iter().filter(|c| !c.samples.is_empty()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn homoclinic_fit_recovers_synthetic_law() {
        let sigma_hom = 3.2307;
        let params: Vec<f64> = (0..8).map(|k| sigma_hom + 1e-6 * (0.5f64).powi(k)).collect();
        let periods: Vec<f64> = params.iter().map(|s| 5.0 - 4.0 * (s - sigma_hom).ln()).collect();
        let fit = fit_homoclinic(&params, &periods).unwrap();
        assert!((fit.sigma_hom - sigma_hom).abs() < 1e-9, "{fit:?}");
        assert!((fit.b - 4.0).abs() < 1e-3 && fit.r2 > 0.9999);
    }

    #[test]
    fn non_monotone_tail_is_rejected() {
        let params = [1.0, 0.9, 0.8, 0.7];
        let periods = [10.0, 12.0, 11.0, 13.0];
        assert!(fit_homoclinic(&params, &periods).is_err());
    }

    #[test]
    fn multipliers_put_trivial_first() {
        let m = sort_multipliers([
            Complex64::new(0.1, 0.0),
            Complex64::new(-1.2, 0.0),
            Complex64::new(1.0 + 1e-9, 0.0),
        ]);
        assert_eq!(m[0].re, 1.0 + 1e-9);
        assert_eq!(m[1].re, -1.2);
    }
}
