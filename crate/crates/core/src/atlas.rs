//! Operating diagram in the `(S_in, D)` plane.
//!
//! Fold and Hopf curves of equilibria are continued directly. Cycle fold
//! and period-doubling curves are assembled from one-parameter families
//! computed on a set of `D` slices.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::branch::{continue_equilibria, equilibrium_policy, BifurcationEvent, Branch, EventKind};
use crate::continuation::{locate_zero, tangent, ContPoint, ContinuationProblem, StepPolicy, Stepper};
use crate::cycles::{continue_cycles, cycle_from_hopf, period_curve, FamilyOptions, PeriodCurve, DEFAULT_SEED_RADIUS};
use crate::equilibria::{find_coexistence, reduced_residual, RouthHurwitz, Stability};
use crate::error::{Error, Result};
use crate::hopf::first_lyapunov;
use crate::model::{jacobian, ModelParams, OperatingParam, State};

/// Rectangle of the control plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub s_in: (f64, f64),
    pub d: (f64, f64),
}

impl Default for Window {
    fn default() -> Self {
        Window { s_in: (0.0, 5.0), d: (0.0, 0.8) }
    }
}

impl Window {
    pub fn new(s_min: f64, s_max: f64, d_min: f64, d_max: f64) -> Result<Self> {
        if !(s_min < s_max && d_min < d_max && s_min >= 0.0 && d_min >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "bad window [{s_min}, {s_max}] x [{d_min}, {d_max}]"
            )));
        }
        Ok(Window { s_in: (s_min, s_max), d: (d_min, d_max) })
    }

    pub fn contains(&self, s_in: f64, d: f64) -> bool {
        s_in >= self.s_in.0 && s_in <= self.s_in.1 && d >= self.d.0 && d <= self.d.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CurveKind {
    #[serde(rename = "LP")]
    Lp,
    #[serde(rename = "H")]
    Hopf,
    #[serde(rename = "LPC")]
    Lpc,
    #[serde(rename = "PD")]
    Pd,
}

impl CurveKind {
    pub fn label(self) -> &'static str {
        match self {
            CurveKind::Lp => "LP",
            CurveKind::Hopf => "H",
            CurveKind::Lpc => "LPC",
            CurveKind::Pd => "PD",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Codim2Kind {
    #[serde(rename = "BT")]
    Bt,
    #[serde(rename = "GH")]
    Gh,
    R1,
    R2,
    #[serde(rename = "CPC")]
    Cpc,
}

impl Codim2Kind {
    pub fn label(self) -> &'static str {
        match self {
            Codim2Kind::Bt => "BT",
            Codim2Kind::Gh => "GH",
            Codim2Kind::R1 => "R1",
            Codim2Kind::R2 => "R2",
            Codim2Kind::Cpc => "CPC",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub s_in: f64,
    pub d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<State>,
    /// `c2 = omega^2` on Hopf curves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

impl CurveSample {
    fn at(s_in: f64, d: f64) -> Self {
        CurveSample { s_in, d, state: None, omega2: None, l1: None, period: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codim2Point {
    pub kind: Codim2Kind,
    pub s_in: f64,
    pub d: f64,
    pub uncertainty: f64,
    pub provenance: String,
    /// Set when the location is a stand-in for a condition that is not
    /// actually tested.
    pub proxy: bool,
    /// Closest-approach distance of a proxy point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

/// A bifurcation curve ordered along its arclength (or along `D` for
/// curves assembled from slices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifCurve {
    pub kind: CurveKind,
    pub label: String,
    pub samples: Vec<CurveSample>,
    /// Codimension-two points located while tracing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub markers: Vec<Codim2Point>,
}

impl BifCurve {
    /// Euclidean distance in the `(S_in, D)` plane to the polyline.
    pub fn distance_to(&self, s_in: f64, d: f64) -> f64 {
        match self.samples.len() {
            0 => f64::INFINITY,
            1 => (self.samples[0].s_in - s_in).hypot(self.samples[0].d - d),
            _ => self
                .samples
                .windows(2)
                .map(|w| segment_distance((w[0].s_in, w[0].d), (w[1].s_in, w[1].d), (s_in, d)))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// `S_in` values where the curve crosses the line `D = d`.
    pub fn crossings_at(&self, d: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for w in self.samples.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if (a.d - d) * (b.d - d) <= 0.0 && a.d != b.d {
                let t = (d - a.d) / (b.d - a.d);
                out.push(a.s_in + t * (b.s_in - a.s_in));
            }
        }
        out
    }
}

fn segment_distance(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a.0 + t * dx - p.0).hypot(a.1 + t * dy - p.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Condition {
    Fold,
    Hopf,
}

/// Equilibrium system plus one Routh–Hurwitz condition in
/// `(S, x1, x2, S_in, D)`.
struct TwoParamProblem {
    base: ModelParams,
    condition: Condition,
    window: Window,
}

impl TwoParamProblem {
    fn params(&self, y: &DVector<f64>) -> ModelParams {
        self.base.at(y[3], y[4])
    }

    fn state(y: &DVector<f64>) -> State {
        State::new(y[0], y[1], y[2])
    }

    fn rh(&self, y: &DVector<f64>) -> RouthHurwitz {
        RouthHurwitz::from_matrix(&jacobian(&Self::state(y), &self.params(y)))
    }

    fn test(&self, y: &DVector<f64>) -> f64 {
        let rh = self.rh(y);
        match self.condition {
            Condition::Fold => rh.c3,
            Condition::Hopf => rh.c4,
        }
    }

    fn sample(&self, y: &DVector<f64>) -> CurveSample {
        let mut s = CurveSample::at(y[3], y[4]);
        s.state = Some(Self::state(y));
        if self.condition == Condition::Hopf {
            let rh = self.rh(y);
            s.omega2 = Some(rh.c2);
            s.l1 = self.l1(y);
        }
        s
    }

    fn l1(&self, y: &DVector<f64>) -> Option<f64> {
        let rh = self.rh(y);
        if rh.c2 <= 0.0 {
            return None;
        }
        first_lyapunov(&Self::state(y), &self.params(y), rh.c2.sqrt()).ok()
    }
}

impl ContinuationProblem for TwoParamProblem {
    fn dim(&self) -> usize {
        5
    }

    fn residual(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let r = reduced_residual(&Vector3::new(y[0], y[1], y[2]), &self.params(y));
        Ok(DVector::from_vec(vec![r[0], r[1], r[2], self.test(y)]))
    }

    fn jacobian(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        let p = self.params(y);
        let x = Vector3::new(y[0], y[1], y[2]);
        let j = crate::equilibria::reduced_jacobian(&x, &p);
        let mut out = DMatrix::zeros(4, 5);
        out.view_mut((0, 0), (3, 3)).copy_from(&j);
        let alpha = p.removal.alpha;
        out[(0, 3)] = p.d();
        out[(0, 4)] = p.s_in() - x[0] - alpha[0] * x[1] - alpha[1] * x[2];
        out[(1, 4)] = -alpha[0];
        out[(2, 4)] = -alpha[1];
        for k in 0..5 {
            let h = 1e-7 * (1.0 + y[k].abs());
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[k] += h;
            ym[k] -= h;
            out[(3, k)] = (self.test(&yp) - self.test(&ym)) / (2.0 * h);
        }
        Ok(out)
    }

    fn admissible(&self, y: &DVector<f64>) -> bool {
        y[0] > 0.0 && y[1] > 0.0 && y[2] > 0.0 && y[4] > 0.0 && self.window.contains(y[3], y[4])
    }
}

/// Step policy of two-parameter curves.
pub fn curve_policy() -> StepPolicy {
    StepPolicy { h_init: 1e-3, h_min: 1e-7, h_max: 0.02, max_points: 5000, ..StepPolicy::default() }
}

fn seed_vector(seed: &BifurcationEvent, base: &ModelParams) -> Result<DVector<f64>> {
    let x = seed
        .state
        .ok_or_else(|| Error::InvalidParams("seed event without state".into()))?;
    let p = seed.params(base);
    Ok(DVector::from_vec(vec![x.s, x.x1, x.x2, p.s_in(), p.d()]))
}

/// Outcome of a pair of consecutive points for a curve-specific detector.
struct Detected {
    markers: Vec<Codim2Point>,
    stop: bool,
}

/// Traces the curve through `y0` in both directions and returns the
/// samples in arclength order together with the detected markers.
fn trace<F>(problem: &mut TwoParamProblem, y0: DVector<f64>, policy: &StepPolicy, mut detect: F) -> Result<(Vec<DVector<f64>>, Vec<Codim2Point>)>
where
    F: FnMut(&TwoParamProblem, &ContPoint, &ContPoint) -> Detected,
{
    let (y0, _) = crate::continuation::correct(&*problem, &y0, &y0, &tangent(&*problem, &y0, None)?, policy)?;
    let t0 = tangent(&*problem, &y0, None)?;
    let mut halves = Vec::new();
    let mut markers = Vec::new();
    for sign in [1.0, -1.0] {
        let dir = &t0 * sign;
        let mut pts = vec![y0.clone()];
        let check = TwoParamProblem { base: problem.base, condition: problem.condition, window: problem.window };
        let mut stepper = Stepper::new(&mut *problem, y0.clone(), &dir, *policy)?;
        for _ in 0..policy.max_points {
            let prev = stepper.current.clone();
            let Ok(next) = stepper.step() else { break };
            if !check.admissible(&next.y) {
                break;
            }
            let found = detect(&check, &prev, &next);
            markers.extend(found.markers);
            if found.stop {
                break;
            }
            pts.push(next.y.clone());
            stepper.commit(next);
        }
        halves.push(pts);
    }
    let fwd = halves.remove(0);
    let mut all: Vec<DVector<f64>> = halves.remove(0).into_iter().rev().collect();
    all.extend(fwd.into_iter().skip(1));
    Ok((all, markers))
}

/// Continues the saddle-node curve `det J = 0` through an LP event.
pub fn continue_lp_curve(base: &ModelParams, seed: &BifurcationEvent, window: &Window) -> Result<BifCurve> {
    let mut problem = TwoParamProblem { base: *base, condition: Condition::Fold, window: *window };
    let y0 = seed_vector(seed, base)?;
    let (ys, _) = trace(&mut problem, y0, &curve_policy(), |_, _, _| Detected { markers: Vec::new(), stop: false })?;
    Ok(BifCurve {
        kind: CurveKind::Lp,
        label: "LP".into(),
        samples: ys.iter().map(|y| problem.sample(y)).collect(),
        markers: Vec::new(),
    })
}

/// Tolerance on `l1` when locating generalized Hopf points.
pub const GH_TOL: f64 = 1e-6;

/// Continues the Hopf curve `c4 = 0` through an H event. The curve is
/// stopped where `c2` (or `c3`) reaches zero, which is recorded as a
/// Bogdanov–Takens point; sign changes of `l1` are recorded as GH points.
pub fn continue_hopf_curve(base: &ModelParams, seed: &BifurcationEvent, window: &Window) -> Result<BifCurve> {
    let mut problem = TwoParamProblem { base: *base, condition: Condition::Hopf, window: *window };
    let y0 = seed_vector(seed, base)?;
    let policy = curve_policy();
    let (ys, markers) = trace(&mut problem, y0, &policy, |pr, prev, next| {
        let mut out = Detected { markers: Vec::new(), stop: false };
        let (r0, r1) = (pr.rh(&prev.y), pr.rh(&next.y));
        if r1.c2 <= 0.0 || r1.c3 <= 0.0 {
            out.stop = true;
            if r0.c2 > 0.0 && r1.c2 <= 0.0 {
                let test = |c: &ContPoint| Ok(pr.rh(&c.y).c2);
                if let Ok(c) = locate_zero(pr, prev, next, test, 1e-12, &policy) {
                    let dist = (c.y[3] - prev.y[3]).hypot(c.y[4] - prev.y[4]);
                    out.markers.push(Codim2Point {
                        kind: Codim2Kind::Bt,
                        s_in: c.y[3],
                        d: c.y[4],
                        uncertainty: dist.max(1e-6),
                        provenance: "Hopf curve, c2 -> 0".into(),
                        proxy: false,
                        distance: None,
                    });
                }
            }
            return out;
        }
        if let (Some(a), Some(b)) = (pr.l1(&prev.y), pr.l1(&next.y)) {
            if (a > 0.0) != (b > 0.0) {
                let test = |c: &ContPoint| pr.l1(&c.y).ok_or(Error::IllConditioned("l1 unavailable".into()));
                let width = (next.y[3] - prev.y[3]).hypot(next.y[4] - prev.y[4]);
                let (s, d, unc) = match locate_zero(pr, prev, next, test, GH_TOL, &policy) {
                    Ok(c) => (c.y[3], c.y[4], width * GH_TOL / (a - b).abs().max(GH_TOL)),
                    Err(_) => {
                        let t = a / (a - b);
                        (prev.y[3] + t * (next.y[3] - prev.y[3]), prev.y[4] + t * (next.y[4] - prev.y[4]), width)
                    }
                };
                out.markers.push(Codim2Point {
                    kind: Codim2Kind::Gh,
                    s_in: s,
                    d,
                    uncertainty: unc.max(1e-6),
                    provenance: "Hopf curve, sign change of l1".into(),
                    proxy: false,
                    distance: None,
                });
            }
        }
        out
    })?;
    Ok(BifCurve {
        kind: CurveKind::Hopf,
        label: "H".into(),
        samples: ys.iter().map(|y| problem.sample(y)).collect(),
        markers,
    })
}

/// Equilibrium branch in `S_in` at fixed `D`, started from the
/// coexistence equilibrium with the largest biomass at the top of
/// `s_range`. `None` when no coexistence equilibrium exists there.
pub fn slice_branch(base: &ModelParams, d: f64, s_range: (f64, f64)) -> Result<Option<Branch>> {
    let p = base.with_operating(s_range.1, d)?;
    let eqs = find_coexistence(&p)?;
    let Some(start) = eqs.first() else { return Ok(None) };
    continue_equilibria(&start.state, &p, OperatingParam::SIn, s_range, &equilibrium_policy()).map(Some)
}

/// Options of the slice sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub d_range: (f64, f64),
    pub slices: usize,
    /// Spacing refinement factor between slices whose event counts differ.
    pub refine: usize,
    pub family: FamilyOptions,
}

/// Oscillatory window of `D` where cycle bifurcations occur for the
/// default parameters.
pub const OSCILLATORY_D: (f64, f64) = (0.19, 0.232);

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { d_range: OSCILLATORY_D, slices: 22, refine: 4, family: FamilyOptions::default() }
    }
}

/// Cycle bifurcation found along one family of a slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceEvent {
    pub kind: EventKind,
    pub s_in: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    /// Position among events of the same kind along the family.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceFamily {
    pub hopf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1: Option<f64>,
    /// In arclength order.
    pub events: Vec<SliceEvent>,
    /// Thinned period curves, one per labeled part.
    pub parts: Vec<PeriodCurve>,
    pub stop: String,
}

impl SliceFamily {
    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn nth(&self, kind: EventKind, rank: usize) -> Option<&SliceEvent> {
        self.events.iter().find(|e| e.kind == kind && e.rank == rank)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub d: f64,
    pub families: Vec<SliceFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Slice {
    fn signature(&self) -> (usize, usize) {
        let lpc = self.families.iter().map(|f| f.count(EventKind::Lpc)).sum();
        let pd = self.families.iter().map(|f| f.count(EventKind::PeriodDoubling)).sum();
        (lpc, pd)
    }
}

/// Slices in ascending `D`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub slices: Vec<Slice>,
}

/// Largest number of samples kept per period curve part.
const PART_SAMPLES: usize = 400;

fn thin(part: PeriodCurve) -> PeriodCurve {
    let n = part.samples.len();
    if n <= PART_SAMPLES {
        return part;
    }
    let stride = n.div_ceil(PART_SAMPLES);
    let mut samples: Vec<_> = part.samples.iter().step_by(stride).copied().collect();
    if (n - 1) % stride != 0 {
        samples.push(part.samples[n - 1]);
    }
    PeriodCurve { label: part.label, samples }
}

/// Runs the Hopf-born cycle families of one `D` slice.
pub fn sweep_slice(base: &ModelParams, d: f64, s_range: (f64, f64), opts: &FamilyOptions) -> Slice {
    let mut slice = Slice { d, families: Vec::new(), note: None };
    let branch = match slice_branch(base, d, s_range) {
        Ok(Some(b)) => b,
        Ok(None) => return slice,
        Err(e) => {
            slice.note = Some(e.to_string());
            return slice;
        }
    };
    for h in branch.events_of(EventKind::Hopf) {
        let fam = cycle_from_hopf(h, base, DEFAULT_SEED_RADIUS).and_then(|c| continue_cycles(&c, base, s_range, opts));
        match fam {
            Ok(fam) => {
                let mut events = Vec::new();
                for e in &fam.events {
                    if matches!(e.kind, EventKind::Lpc | EventKind::PeriodDoubling | EventKind::Homoclinic) {
                        let rank = events.iter().filter(|x: &&SliceEvent| x.kind == e.kind).count();
                        events.push(SliceEvent { kind: e.kind, s_in: e.param, period: e.period, rank });
                    }
                }
                let parts = period_curve(std::slice::from_ref(&fam)).into_iter().map(thin).collect();
                slice.families.push(SliceFamily { hopf: h.param, l1: h.l1, events, parts, stop: fam.stop });
            }
            Err(e) => slice.note = Some(format!("family at S_in = {:.6}: {e}", h.param)),
        }
    }
    slice
}

/// Sweeps `D` slices over `opts.d_range` intersected with the window, then
/// inserts `refine - 1` extra slices between neighbors whose LPC or PD
/// counts differ.
pub fn sweep_cycle_curves(base: &ModelParams, window: &Window, opts: &SweepOptions) -> Sweep {
    let lo = opts.d_range.0.max(window.d.0).max(1e-9);
    let hi = opts.d_range.1.min(window.d.1);
    if !(hi >= lo) || opts.slices == 0 {
        return Sweep::default();
    }
    let n = opts.slices.max(2);
    let grid: Vec<f64> = if hi > lo {
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    } else {
        vec![lo]
    };
    let run = |ds: &[f64]| -> Vec<Slice> {
        ds.par_iter().map(|&d| sweep_slice(base, d, window.s_in, &opts.family)).collect()
    };
    let mut slices = run(&grid);
    if opts.refine > 1 {
        let mut extra = Vec::new();
        for w in slices.windows(2) {
            if w[0].signature() != w[1].signature() {
                for k in 1..opts.refine {
                    extra.push(w[0].d + (w[1].d - w[0].d) * k as f64 / opts.refine as f64);
                }
            }
        }
        slices.extend(run(&extra));
        slices.sort_by(|a, b| a.d.partial_cmp(&b.d).unwrap());
    }
    Sweep { slices }
}

impl Sweep {
    /// Distance from the slice at `i` to its nearest neighbor.
    fn spacing(&self, i: usize) -> f64 {
        let d = self.slices[i].d;
        let left = i.checked_sub(1).map(|j| d - self.slices[j].d);
        let right = self.slices.get(i + 1).map(|s| s.d - d);
        match (left, right) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => 0.0,
        }
    }

    /// Chains events of one kind across slices: the k-th event of that
    /// kind along the j-th family forms one curve.
    pub fn curves(&self, kind: CurveKind) -> Vec<BifCurve> {
        let ev = match kind {
            CurveKind::Lpc => EventKind::Lpc,
            CurveKind::Pd => EventKind::PeriodDoubling,
            _ => return Vec::new(),
        };
        let mut keys: Vec<(usize, usize)> = Vec::new();
        for s in &self.slices {
            for (j, f) in s.families.iter().enumerate() {
                for e in f.events.iter().filter(|e| e.kind == ev) {
                    if !keys.contains(&(j, e.rank)) {
                        keys.push((j, e.rank));
                    }
                }
            }
        }
        keys.sort();
        keys.iter()
            .map(|&(j, rank)| {
                let samples = self
                    .slices
                    .iter()
                    .filter_map(|s| {
                        let e = s.families.get(j)?.nth(ev, rank)?;
                        let mut c = CurveSample::at(e.s_in, s.d);
                        c.period = e.period;
                        Some(c)
                    })
                    .collect();
                let label = if j == 0 {
                    format!("{}{}", kind.label(), rank + 1)
                } else {
                    format!("{}{}.{}", kind.label(), j + 1, rank + 1)
                };
                BifCurve { kind, label, samples, markers: Vec::new() }
            })
            .collect()
    }

    /// Slices whose first PD and some LPC are closer than twice the
    /// localization tolerance: the ordering of the two is not resolved.
    pub fn unresolved_pairs(&self, tol: f64) -> Vec<f64> {
        self.slices
            .iter()
            .filter(|s| {
                s.families.iter().any(|f| {
                    f.events.iter().filter(|e| e.kind == EventKind::PeriodDoubling).any(|pd| {
                        f.events
                            .iter()
                            .filter(|e| e.kind == EventKind::Lpc)
                            .any(|l| (l.s_in - pd.s_in).abs() < 2.0 * tol)
                    })
                })
            })
            .map(|s| s.d)
            .collect()
    }

    fn lpc_pair(&self, i: usize) -> Option<(f64, f64)> {
        let f = self.slices[i].families.first()?;
        Some((f.nth(EventKind::Lpc, 0)?.s_in, f.nth(EventKind::Lpc, 1)?.s_in))
    }

    fn lpc_count(&self, i: usize) -> usize {
        self.slices[i].families.first().map_or(0, |f| f.count(EventKind::Lpc))
    }

    /// Cusp of cycles: the lowest-`D` coalescence of the two LPC values,
    /// from a quadratic fit of the squared gap against `D`.
    pub fn locate_cpc(&self) -> Option<Codim2Point> {
        let first = (1..self.slices.len()).find(|&i| self.lpc_pair(i).is_some() && self.lpc_count(i - 1) == 0)?;
        let d_below = self.slices[first - 1].d;
        let idx: Vec<usize> = (first..self.slices.len()).take_while(|&i| self.lpc_pair(i).is_some()).take(4).collect();
        let pts: Vec<(f64, f64)> = idx
            .iter()
            .map(|&i| {
                let (a, b) = self.lpc_pair(i).unwrap();
                (self.slices[i].d, (b - a) * (b - a))
            })
            .collect();
        let mean = |i: usize| {
            let (a, b) = self.lpc_pair(i).unwrap();
            0.5 * (a + b)
        };
        let d0 = self.slices[first].d;
        let fit = polyfit(&pts, pts.len().min(3) - 1);
        // the coalescing slice itself may carry a zero gap, so the root is
        // searched up to the second slice with a pair
        let d_hi = idx.get(1).map_or(d0, |&i| self.slices[i].d);
        let root = fit.and_then(|c| {
            let f = |d: f64| c.iter().rev().fold(0.0, |acc, &ck| acc * d + ck);
            let (mut a, mut b) = (d_below, d_hi);
            if (f(a) > 0.0) == (f(b) > 0.0) {
                return None;
            }
            for _ in 0..100 {
                let m = 0.5 * (a + b);
                if (f(m) > 0.0) == (f(a) > 0.0) {
                    a = m;
                } else {
                    b = m;
                }
            }
            Some(0.5 * (a + b)).filter(|&r| r <= d0)
        });
        let d_cpc = root.unwrap_or(0.5 * (d_below + d0));
        let slope = if idx.len() >= 2 {
            (mean(idx[1]) - mean(idx[0])) / (self.slices[idx[1]].d - d0)
        } else {
            0.0
        };
        let s_cpc = mean(first) + slope * (d_cpc - d0);
        let spacing = d0 - d_below;
        Some(Codim2Point {
            kind: Codim2Kind::Cpc,
            s_in: s_cpc,
            d: d_cpc,
            uncertainty: spacing * (1.0 + slope * slope).sqrt(),
            provenance: format!("LPC pair coalescence, fit over {} slices", idx.len()),
            proxy: false,
            distance: None,
        })
    }

    /// Resonance point at the maximal-`D` end of the first PD curve.
    pub fn locate_r2(&self) -> Option<Codim2Point> {
        let i = (0..self.slices.len())
            .rev()
            .find(|&i| self.slices[i].families.first().is_some_and(|f| f.count(EventKind::PeriodDoubling) > 0))?;
        let pd = self.slices[i].families[0].nth(EventKind::PeriodDoubling, 0)?;
        let spacing = self.spacing(i);
        let slope = (i > 0)
            .then(|| self.slices[i - 1].families.first()?.nth(EventKind::PeriodDoubling, 0))
            .flatten()
            .map_or(0.0, |prev| (pd.s_in - prev.s_in) / (self.slices[i].d - self.slices[i - 1].d));
        Some(Codim2Point {
            kind: Codim2Kind::R2,
            s_in: pd.s_in,
            d: self.slices[i].d,
            uncertainty: spacing * (1.0 + slope * slope).sqrt(),
            provenance: "PD curve, maximal D over slices".into(),
            proxy: false,
            distance: None,
        })
    }

    /// Stand-in for the 1:1 resonance: the maximal-`D` end of the second
    /// LPC curve, where it runs into the homoclinic curve. The distance to
    /// the Hopf curve is reported alongside.
    pub fn locate_r1_proxy(&self, hopf: &BifCurve) -> Option<Codim2Point> {
        let i = (0..self.slices.len())
            .rev()
            .find(|&i| self.slices[i].families.first().is_some_and(|f| f.nth(EventKind::Lpc, 1).is_some()))?;
        let e = self.slices[i].families[0].nth(EventKind::Lpc, 1)?;
        let d = self.slices[i].d;
        Some(Codim2Point {
            kind: Codim2Kind::R1,
            s_in: e.s_in,
            d,
            uncertainty: self.spacing(i),
            provenance: "second LPC curve, maximal D over slices".into(),
            proxy: true,
            distance: Some(hopf.distance_to(e.s_in, d)),
        })
    }
}

/// Least-squares polynomial coefficients (ascending powers).
fn polyfit(pts: &[(f64, f64)], degree: usize) -> Option<Vec<f64>> {
    if pts.len() < degree + 1 {
        return None;
    }
    let x0 = pts[0].0;
    let a = DMatrix::from_fn(pts.len(), degree + 1, |r, c| (pts[r].0 - x0).powi(c as i32));
    let b = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let c = (a.transpose() * &a).lu().solve(&(a.transpose() * b))?;
    // shift back to powers of x
    let mut out = vec![0.0; degree + 1];
    for (k, &ck) in c.iter().enumerate() {
        for j in 0..=k {
            out[j] += ck * binomial(k, j) as f64 * (-x0).powi((k - j) as i32);
        }
    }
    Some(out)
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Collects the codimension-two points: BT and GH from the Hopf curve,
/// CPC, R2 and the R1 proxy from the slice sweep.
pub fn locate_codim2(curves: &[BifCurve], sweep: &Sweep) -> Vec<Codim2Point> {
    let mut out: Vec<Codim2Point> = Vec::new();
    let lp: Vec<&BifCurve> = curves.iter().filter(|c| c.kind == CurveKind::Lp).collect();
    for c in curves.iter().filter(|c| c.kind == CurveKind::Hopf) {
        for m in &c.markers {
            let mut m = m.clone();
            if m.kind == Codim2Kind::Bt {
                // BT also lies on the fold curve
                let gap = lp.iter().map(|l| l.distance_to(m.s_in, m.d)).fold(f64::INFINITY, f64::min);
                if gap.is_finite() {
                    m.uncertainty = m.uncertainty.max(gap);
                }
            }
            out.push(m);
        }
    }
    out.extend(sweep.locate_cpc());
    out.extend(sweep.locate_r2());
    if let Some(h) = curves.iter().find(|c| c.kind == CurveKind::Hopf) {
        out.extend(sweep.locate_r1_proxy(h));
    }
    out
}

/// Region labels of the existence/stability table, plus the two labels
/// used by the one-parameter tables (`J1^{C123suu}`, `J2^{C1u}`).
pub const TAXONOMY: [&str; 13] = [
    "J0",
    "J1^0",
    "J1^{C1u}",
    "J1^{C1s}",
    "J1^{C12su}",
    "J1^{C123sus}",
    "J1^{C123suu}",
    "J2^0",
    "J2^{C1u}",
    "J2^{C2u}",
    "J2^{C1s}",
    "J2^{C23us}",
    "J2^{C23uu}",
];

/// Label from the stability of `E1*` (`None` when no coexistence
/// equilibrium exists) and the cycles present, as `(index, stable)`.
pub fn region_label(e1: Option<Stability>, cycles: &[(usize, bool)]) -> String {
    let Some(e1) = e1 else { return "J0".into() };
    let head = if e1.is_stable() { "J2" } else { "J1" };
    if cycles.is_empty() {
        return format!("{head}^0");
    }
    let mut c = cycles.to_vec();
    c.sort();
    let idx: String = c.iter().map(|(i, _)| i.to_string()).collect();
    let stab: String = c.iter().map(|&(_, s)| if s { 's' } else { 'u' }).collect();
    format!("{head}^{{C{idx}{stab}}}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCell {
    pub s_in: f64,
    pub d: f64,
    pub label: String,
    /// Stability letters of `E1*`, `E2*` when present.
    pub e1: Option<char>,
    pub e2: Option<char>,
    /// Cycle inventory, e.g. `C1s C2u`.
    pub cycles: String,
    pub flagged: bool,
}

/// Cell-centered grid, rows in ascending `D`, columns in ascending `S_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGrid {
    pub window: Window,
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<RegionCell>,
}

impl RegionGrid {
    pub fn cell(&self, ix: usize, iy: usize) -> &RegionCell {
        &self.cells[iy * self.nx + ix]
    }

    pub fn flagged(&self) -> usize {
        self.cells.iter().filter(|c| c.flagged).count()
    }
}

/// Cycles present at `s_in` on the parts of the families of a slice.
fn cycles_at(slice: &Slice, s_in: f64) -> Vec<(usize, bool)> {
    let mut out = Vec::new();
    for f in &slice.families {
        for part in &f.parts {
            let Some(idx) = part.label.strip_prefix('C').and_then(|s| s.parse::<usize>().ok()) else { continue };
            let hit = part.samples.windows(2).find(|w| (w[0].0 - s_in) * (w[1].0 - s_in) <= 0.0 && w[0].0 != w[1].0);
            if let Some(w) = hit {
                let near = if (w[0].0 - s_in).abs() <= (w[1].0 - s_in).abs() { w[0] } else { w[1] };
                if !out.iter().any(|&(i, _)| i == idx) {
                    out.push((idx, near.2));
                }
            }
        }
    }
    out
}

/// Labels every cell from its equilibria and, when a slice of `sweep`
/// lies within one slice spacing in `D`, from the cycle inventory of the
/// nearest slice. Cells whose inventory has no entry in [`TAXONOMY`] or
/// whose equilibria could not be resolved are flagged.
pub fn classify_regions(base: &ModelParams, window: &Window, nx: usize, ny: usize, sweep: Option<&Sweep>) -> RegionGrid {
    let centers: Vec<(f64, f64)> = (0..ny)
        .flat_map(|iy| {
            (0..nx).map(move |ix| {
                let s = window.s_in.0 + (window.s_in.1 - window.s_in.0) * (ix as f64 + 0.5) / nx as f64;
                let d = window.d.0 + (window.d.1 - window.d.0) * (iy as f64 + 0.5) / ny as f64;
                (s, d)
            })
        })
        .collect();
    let cells = centers
        .par_iter()
        .map(|&(s_in, d)| {
            let mut cell = RegionCell { s_in, d, label: String::new(), e1: None, e2: None, cycles: String::new(), flagged: false };
            let eqs = match base.with_operating(s_in, d).and_then(|p| find_coexistence(&p)) {
                Ok(e) => e,
                Err(_) => {
                    cell.label = "J0".into();
                    cell.flagged = true;
                    return cell;
                }
            };
            if eqs.len() == 1 || eqs.len() > 2 {
                cell.flagged = true;
            }
            cell.e1 = eqs.first().map(|e| e.stability.letter());
            cell.e2 = eqs.get(1).map(|e| e.stability.letter());
            let mut cycles = Vec::new();
            if let Some(sw) = sweep {
                if let Some(i) = nearest_slice(sw, d) {
                    cycles = cycles_at(&sw.slices[i], s_in);
                }
            }
            if eqs.is_empty() && !cycles.is_empty() {
                cell.flagged = true;
                cycles.clear();
            }
            cycles.sort();
            cell.cycles = cycles
                .iter()
                .map(|&(i, s)| format!("C{i}{}", if s { 's' } else { 'u' }))
                .collect::<Vec<_>>()
                .join(" ");
            cell.label = region_label(eqs.first().map(|e| e.stability), &cycles);
            if !TAXONOMY.contains(&cell.label.as_str()) {
                cell.flagged = true;
            }
            cell
        })
        .collect();
    RegionGrid { window: *window, nx, ny, cells }
}

fn nearest_slice(sweep: &Sweep, d: f64) -> Option<usize> {
    let i = (0..sweep.slices.len()).min_by(|&a, &b| {
        (sweep.slices[a].d - d).abs().partial_cmp(&(sweep.slices[b].d - d).abs()).unwrap()
    })?;
    let reach = if sweep.slices.len() > 1 { sweep.spacing(i) } else { 0.0 };
    ((sweep.slices[i].d - d).abs() <= reach.max(1e-12)).then_some(i)
}

/// Options of [`build_diagram`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagramOptions {
    pub window: Window,
    pub nx: usize,
    pub ny: usize,
    pub sweep: SweepOptions,
}

impl Default for DiagramOptions {
    fn default() -> Self {
        DiagramOptions { window: Window::default(), nx: 200, ny: 160, sweep: SweepOptions::default() }
    }
}

/// Everything the `diagram` command emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagram {
    pub window: Window,
    pub curves: Vec<BifCurve>,
    pub codim2: Vec<Codim2Point>,
    pub sweep: Sweep,
    pub regions: RegionGrid,
}

/// Fold and Hopf curves seeded from an equilibrium branch at the first
/// `D` (starting from the operating point of `base`) that has the events.
pub fn equilibrium_curves(base: &ModelParams, window: &Window) -> Result<Vec<BifCurve>> {
    let mut candidates = vec![base.d()];
    candidates.extend((1..10).map(|k| window.d.0 + (window.d.1 - window.d.0) * k as f64 / 10.0));
    let mut lp = None;
    let mut hopf = None;
    for d in candidates {
        if !(d > window.d.0 && d <= window.d.1) || (lp.is_some() && hopf.is_some()) {
            continue;
        }
        let Ok(Some(branch)) = slice_branch(base, d, window.s_in) else { continue };
        if lp.is_none() {
            if let Some(e) = branch.events_of(EventKind::Lp).next() {
                lp = Some(continue_lp_curve(base, e, window)?);
            }
        }
        if hopf.is_none() {
            if let Some(e) = branch.events_of(EventKind::Hopf).next() {
                hopf = Some(continue_hopf_curve(base, e, window)?);
            }
        }
    }
    Ok(lp.into_iter().chain(hopf).collect())
}

/// Full operating diagram over `opts.window`.
pub fn build_diagram(base: &ModelParams, opts: &DiagramOptions) -> Result<Diagram> {
    base.validate()?;
    let window = opts.window;
    let mut curves = equilibrium_curves(base, &window)?;
    let sweep = if curves.iter().any(|c| c.kind == CurveKind::Hopf) {
        sweep_cycle_curves(base, &window, &opts.sweep)
    } else {
        Sweep::default()
    };
    curves.extend(sweep.curves(CurveKind::Lpc));
    curves.extend(sweep.curves(CurveKind::Pd));
    let codim2 = locate_codim2(&curves, &sweep);
    let regions = classify_regions(base, &window, opts.nx, opts.ny, Some(&sweep));
    Ok(Diagram { window, curves, codim2, sweep, regions })
}

/// `det J` along a curve sample, used to check fold samples.
pub fn sample_det(base: &ModelParams, s: &CurveSample) -> Option<f64> {
    let x = s.state?;
    let j: Matrix3<f64> = jacobian(&x, &base.at(s.s_in, s.d));
    Some(j.determinant())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polyfit_recovers_quadratic() {
        let pts: Vec<(f64, f64)> = [0.19, 0.2, 0.21].iter().map(|&x| (x, 3.0 - 2.0 * x + 5.0 * x * x)).collect();
        let c = polyfit(&pts, 2).unwrap();
        assert!((c[0] - 3.0).abs() < 1e-9 && (c[1] + 2.0).abs() < 1e-8 && (c[2] - 5.0).abs() < 1e-7, "{c:?}");
    }

    #[test]
    fn labels_follow_inventory() {
        assert_eq!(region_label(None, &[]), "J0");
        assert_eq!(region_label(Some(Stability::Unstable), &[]), "J1^0");
        assert_eq!(region_label(Some(Stability::Unstable), &[(2, false), (1, true), (3, true)]), "J1^{C123sus}");
        assert_eq!(region_label(Some(Stability::Les), &[(3, true), (2, false)]), "J2^{C23us}");
        for l in ["J1^{C1s}", "J2^{C23uu}"] {
            assert!(TAXONOMY.contains(&l));
        }
    }

    #[test]
    fn polyline_distance() {
        let c = BifCurve {
            kind: CurveKind::Lp,
            label: "LP".into(),
            samples: vec![CurveSample::at(0.0, 0.0), CurveSample::at(1.0, 0.0)],
            markers: Vec::new(),
        };
        assert!((c.distance_to(0.5, 0.2) - 0.2).abs() < 1e-15);
        assert!((c.distance_to(2.0, 0.0) - 1.0).abs() < 1e-15);
        assert_eq!(c.crossings_at(0.0).len(), 0);
    }

    #[test]
    fn fold_curve_through_known_points() {
        let base = ModelParams::default();
        let window = Window::default();
        let curves = equilibrium_curves(&base, &window).unwrap();
        let lp = curves.iter().find(|c| c.kind == CurveKind::Lp).unwrap();
        for (s, d) in [(2.8504, 0.2), (2.883, 0.195)] {
            assert!(lp.distance_to(s, d) < 2e-3, "({s}, {d}) off the fold curve");
        }
        for s in &lp.samples {
            assert!(sample_det(&base, s).unwrap().abs() < 1e-8);
        }
        let h = curves.iter().find(|c| c.kind == CurveKind::Hopf).unwrap();
        assert!(h.distance_to(3.2381, 0.2) < 2e-3);
        assert!(h.distance_to(3.0590, 0.22) < 2e-3);
        let bt = h.markers.iter().find(|m| m.kind == Codim2Kind::Bt).unwrap();
        assert!((bt.s_in - 2.243).abs() < 0.05 && (bt.d - 0.55).abs() < 0.05, "{bt:?}");
        let gh = h.markers.iter().find(|m| m.kind == Codim2Kind::Gh).unwrap();
        assert!((gh.s_in - 2.995).hypot(gh.d - 0.228) < 0.01, "{gh:?}");
    }
}
