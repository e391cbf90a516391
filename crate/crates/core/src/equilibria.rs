//! Equilibria of the chemostat: closed-form nullcline curves, the
//! coexistence scanner and Routh–Hurwitz classification.
//!
//! A coexistence equilibrium `(S*, x1*, x2*)` satisfies
//! `D (S_in - S*) = D1 x1* + D2 x2*`, `f1(S*, x2*) = D1`, `f2(S*, x1*) = D2`.
//! Eliminating `S*` leaves two curves in the `(x1, x2)` plane,
//! `x1 = F1(x2)` and `x2 = F2(x1)`, whose intersections are the equilibria.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cubic_roots;
use crate::model::{growth_partials_raw, growth_raw, jacobian, ModelParams, Species, State};

/// Absolute residual accepted for a polished equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 50;
const SCAN_POINTS: usize = 2048;
const SCAN_REFINE: usize = 8;
/// Polished roots closer than this are merged into one critical equilibrium.
const MERGE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EquilibriumKind {
    Washout,
    Coexistence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    #[serde(rename = "LES")]
    Les,
    #[serde(rename = "unstable")]
    Unstable,
}

impl Stability {
    pub fn is_stable(self) -> bool {
        self == Stability::Les
    }

    pub fn letter(self) -> char {
        match self {
            Stability::Les => 'S',
            Stability::Unstable => 'U',
        }
    }
}

/// Coefficients of the characteristic polynomial `l^3 + c1 l^2 + c2 l + c3`
/// together with `c4 = c1 c2 - c3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouthHurwitz {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl RouthHurwitz {
    fn new(c1: f64, c2: f64, c3: f64) -> Self {
        RouthHurwitz { c1, c2, c3, c4: c1 * c2 - c3 }
    }

    /// Characteristic coefficients of an arbitrary 3x3 matrix.
    pub fn from_matrix(j: &Matrix3<f64>) -> Self {
        let c1 = -j.trace();
        let c2 = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)] + j[(0, 0)] * j[(2, 2)]
            - j[(0, 2)] * j[(2, 0)]
            + j[(1, 1)] * j[(2, 2)]
            - j[(1, 2)] * j[(2, 1)];
        let c3 = -j.determinant();
        RouthHurwitz::new(c1, c2, c3)
    }

    /// Closed-form coefficients at a coexistence equilibrium, written in
    /// terms of the growth partials `E = df1/dS`, `F = df2/dS`,
    /// `G = df1/dx2`, `H = df2/dx1`.
    pub fn at_coexistence(x: &State, p: &ModelParams) -> Self {
        let pd = Partials::at(x, p);
        let (e, f, g, h) = (pd.e, pd.f, pd.g, pd.h);
        let (d, d1, d2) = (p.d(), p.d1(), p.d2());
        let (x1, x2) = (x.x1, x.x2);
        let c1 = d + e * x1 + f * x2;
        let c2 = d1 * e * x1 + d2 * f * x2 + (f * g + e * h - g * h) * x1 * x2;
        let c3 = (d1 * f * g + d2 * e * h - d * g * h) * x1 * x2;
        RouthHurwitz::new(c1, c2, c3)
    }

    /// Expanded form of `c1 c2 - c3` at a coexistence equilibrium.
    pub fn c4_expanded(x: &State, p: &ModelParams) -> f64 {
        let pd = Partials::at(x, p);
        let (e, f, g, h) = (pd.e, pd.f, pd.g, pd.h);
        let (d, d1, d2) = (p.d(), p.d1(), p.d2());
        let (x1, x2) = (x.x1, x.x2);
        d1 * e * e * x1 * x1
            + d2 * f * f * x2 * x2
            + d * d1 * e * x1
            + d * d2 * f * x2
            + ((d1 + d2) * e * f + (d - d1) * f * g + (d - d2) * e * h) * x1 * x2
            + (f * g + e * h - g * h) * (e * x1 * x1 * x2 + f * x1 * x2 * x2)
    }

    pub fn is_stable(&self) -> bool {
        self.c1 > 0.0 && self.c3 > 0.0 && self.c4 > 0.0
    }

    pub fn roots(&self) -> [Complex64; 3] {
        cubic_roots(self.c1, self.c2, self.c3)
    }
}

/// Growth partials at a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partials {
    pub e: f64,
    pub f: f64,
    pub g: f64,
    pub h: f64,
}

impl Partials {
    pub fn at(x: &State, p: &ModelParams) -> Self {
        let (e, g) = growth_partials_raw(Species::One, x.s, x.x2, p);
        let (f, h) = growth_partials_raw(Species::Two, x.s, x.x1, p);
        Partials { e, f, g, h }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub state: State,
    pub kind: EquilibriumKind,
    pub rh: Option<RouthHurwitz>,
    pub eigenvalues: [Complex64; 3],
    pub stability: Stability,
    /// Set for a double root of the nullcline intersection (fold point).
    pub critical: bool,
}

impl Equilibrium {
    pub fn washout(p: &ModelParams) -> Self {
        let eigenvalues = [-p.d(), -p.d1(), -p.d2()].map(|l| Complex64::new(l, 0.0));
        Equilibrium {
            state: State::washout(p),
            kind: EquilibriumKind::Washout,
            rh: None,
            eigenvalues,
            stability: Stability::Les,
            critical: false,
        }
    }

    /// Real part and positive imaginary part of the complex pair, if any.
    pub fn complex_pair(&self) -> Option<(f64, f64)> {
        self.eigenvalues.iter().find(|z| z.im > 0.0).map(|z| (z.re, z.im))
    }

    pub fn unstable_dimension(&self) -> usize {
        self.eigenvalues.iter().filter(|z| z.re > 0.0).count()
    }
}

/// Closed interval on which `F_i` is defined, plus the simplex bound of
/// its argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveDomain {
    pub species: Species,
    pub x_lo: f64,
    pub x_hi: f64,
    /// `D S_in / D_j`, the end of the admissible range of the argument.
    pub bound: f64,
}

impl CurveDomain {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_lo && x <= self.x_hi
    }
}

fn phi_raw(i: Species, xj: f64, p: &ModelParams) -> f64 {
    let s = p.s_in() - p.theta(i.partner()) * xj;
    growth_raw(i, s.max(0.0), xj, p)
}

/// Growth of species `i` along the boundary line of the simplex, as a
/// function of the partner biomass `x_j`.
pub fn phi(i: Species, xj: f64, p: &ModelParams) -> Result<f64> {
    let bound = p.s_in() / p.theta(i.partner());
    if !(xj >= 0.0 && xj <= bound * (1.0 + 1e-14)) {
        return Err(Error::Domain(format!("x_j = {xj} outside [0, {bound}]")));
    }
    Ok(phi_raw(i, xj, p))
}

/// Coefficients `(a, b, c)` of the numerator `N(x) = a x^2 + b x + c` of `phi_i'`.
pub fn phi_numerator(i: Species, p: &ModelParams) -> (f64, f64, f64) {
    let k = i.index();
    let (kk, ll) = (p.growth.k[k], p.growth.l[k]);
    let th = p.theta(i.partner());
    let sin = p.s_in();
    (
        th * th * ll - th * kk,
        -2.0 * th * ll * (kk + sin),
        sin * ll * (kk + sin),
    )
}

/// Reduced discriminant of the `phi_i'` numerator.
pub fn phi_discriminant(i: Species, p: &ModelParams) -> f64 {
    let k = i.index();
    let (kk, ll) = (p.growth.k[k], p.growth.l[k]);
    let th = p.theta(i.partner());
    th * kk * ll * (kk + p.s_in()) * (th * ll + p.s_in())
}

/// Location of the interior maximum of `phi_i`.
pub fn phi_argmax(i: Species, p: &ModelParams) -> f64 {
    let (_, b, c) = phi_numerator(i, p);
    // smaller-magnitude root in cancellation-free form; N(0) > 0 > N(bound)
    c / (-b / 2.0 + phi_discriminant(i, p).sqrt())
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The two solutions of `phi_i(x_j) = D_i`, or `None` when the maximum of
/// `phi_i` stays below `D_i`.
pub fn phi_roots(i: Species, p: &ModelParams) -> Option<(f64, f64)> {
    if p.s_in() <= 0.0 {
        return None;
    }
    let level = p.removal_rate(i);
    let bound = p.s_in() / p.theta(i.partner());
    let xm = phi_argmax(i, p);
    let peak = phi_raw(i, xm, p);
    if peak < level {
        return None;
    }
    if peak == level {
        return Some((xm, xm));
    }
    let g = |x: f64| phi_raw(i, x, p) - level;
    let lo = bisect(0.0, xm, g);
    let hi = bisect(xm, bound, g);
    Some((lo, hi))
}

/// Domain of `F_i`, when it exists.
pub fn curve_domain(i: Species, p: &ModelParams) -> Option<CurveDomain> {
    phi_roots(i, p).map(|(x_lo, x_hi)| CurveDomain {
        species: i,
        x_lo,
        x_hi,
        bound: p.s_in() / p.theta(i.partner()),
    })
}

fn curve_denominator(i: Species, xj: f64, p: &ModelParams) -> f64 {
    let k = i.index();
    let di = p.removal_rate(i);
    (di - p.growth.m[k]) * xj + di * p.growth.l[k]
}

/// Closed form of `F_i`, without domain checks.
pub(crate) fn f_curve_raw(i: Species, xj: f64, p: &ModelParams) -> f64 {
    let k = i.index();
    let (m, kk, ll) = (p.growth.m[k], p.growth.k[k], p.growth.l[k]);
    let di = p.removal_rate(i);
    let thj = p.theta(i.partner());
    let thi = p.theta(i);
    let sin = p.s_in();
    let num = di * (kk + sin - thj * xj) * (ll + xj) - m * xj * (sin - thj * xj);
    num / (thi * curve_denominator(i, xj, p))
}

fn check_curve_arg(i: Species, xj: f64, p: &ModelParams) -> Result<()> {
    let dom = curve_domain(i, p)
        .ok_or_else(|| Error::Domain(format!("F{} undefined: growth never reaches D_i", i.index() + 1)))?;
    let slack = 1e-12 * dom.x_hi;
    if xj < dom.x_lo - slack || xj > dom.x_hi + slack {
        return Err(Error::Domain(format!(
            "x_j = {xj} outside [{}, {}]",
            dom.x_lo, dom.x_hi
        )));
    }
    if curve_denominator(i, xj, p) >= 0.0 {
        return Err(Error::Singularity(format!(
            "F{} denominator (D_i - m_i) x_j + D_i L_i is nonnegative",
            i.index() + 1
        )));
    }
    Ok(())
}

/// Nullcline `x_i = F_i(x_j)` solving `f_i(S_in - theta_i x_i - theta_j x_j, x_j) = D_i`.
pub fn f_curve(i: Species, xj: f64, p: &ModelParams) -> Result<f64> {
    check_curve_arg(i, xj, p)?;
    Ok(f_curve_raw(i, xj, p))
}

pub(crate) fn f_curve_deriv_raw(i: Species, xj: f64, p: &ModelParams) -> f64 {
    let k = i.index();
    let (m, kk, ll) = (p.growth.m[k], p.growth.k[k], p.growth.l[k]);
    let di = p.removal_rate(i);
    let thj = p.theta(i.partner());
    let dm = di - m;
    let num = -thj * dm * dm * xj * xj - 2.0 * thj * di * ll * dm * xj + di * ll * (m * kk - di * thj * ll);
    let den = curve_denominator(i, xj, p);
    num / (p.theta(i) * den * den)
}

/// Derivative of `F_i` from its rational closed form.
pub fn f_curve_deriv(i: Species, xj: f64, p: &ModelParams) -> Result<f64> {
    check_curve_arg(i, xj, p)?;
    Ok(f_curve_deriv_raw(i, xj, p))
}

/// Derivative of `F_i` through the growth partials: `(-D2 E + D G) / (D1 E)`
/// for species one and `(-D1 F + D H) / (D2 F)` for species two.
pub fn f_curve_deriv_partials(i: Species, xj: f64, p: &ModelParams) -> Result<f64> {
    let xi = f_curve(i, xj, p)?;
    let s = p.s_in() - p.theta(i) * xi - p.theta(i.partner()) * xj;
    let (ds, dx) = growth_partials_raw(i, s, xj, p);
    let di = p.removal_rate(i);
    let dj = p.removal_rate(i.partner());
    Ok((-dj * ds + p.d() * dx) / (di * ds))
}

/// Residual of the reduced equilibrium equations at `(S, x1, x2)`.
pub(crate) fn reduced_residual(x: &Vector3<f64>, p: &ModelParams) -> Vector3<f64> {
    Vector3::new(
        p.d() * (p.s_in() - x[0]) - p.d1() * x[1] - p.d2() * x[2],
        growth_raw(Species::One, x[0], x[2], p) - p.d1(),
        growth_raw(Species::Two, x[0], x[1], p) - p.d2(),
    )
}

pub(crate) fn reduced_jacobian(x: &Vector3<f64>, p: &ModelParams) -> Matrix3<f64> {
    let (e, g) = growth_partials_raw(Species::One, x[0], x[2], p);
    let (f, h) = growth_partials_raw(Species::Two, x[0], x[1], p);
    Matrix3::new(-p.d(), -p.d1(), -p.d2(), e, 0.0, g, f, h, 0.0)
}

/// Newton polish of a coexistence equilibrium guess on the reduced system.
pub fn polish_coexistence(guess: &State, p: &ModelParams) -> Result<State> {
    let mut x = guess.to_vector();
    for _ in 0..NEWTON_MAX_ITER {
        let r = reduced_residual(&x, p);
        if r.amax() <= EQUILIBRIUM_TOL {
            return Ok(State::from_vector(&x));
        }
        let dx = reduced_jacobian(&x, p)
            .lu()
            .solve(&r)
            .ok_or(Error::SingularMatrix)?;
        x -= dx;
        if !x.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    let r = reduced_residual(&x, p);
    if r.amax() <= 10.0 * EQUILIBRIUM_TOL {
        Ok(State::from_vector(&x))
    } else {
        Err(Error::NoConvergence(format!("equilibrium residual {:.3e}", r.amax())))
    }
}

fn state_from_biomass(x1: f64, x2: f64, p: &ModelParams) -> State {
    State::new(p.s_in() - p.d1() / p.d() * x1 - p.d2() / p.d() * x2, x1, x2)
}

/// Stability, Routh–Hurwitz data and spectrum of an equilibrium.
pub fn classify(state: State, kind: EquilibriumKind, p: &ModelParams) -> Equilibrium {
    match kind {
        EquilibriumKind::Washout => Equilibrium::washout(p),
        EquilibriumKind::Coexistence => {
            let rh = RouthHurwitz::at_coexistence(&state, p);
            let stability = if rh.is_stable() { Stability::Les } else { Stability::Unstable };
            Equilibrium {
                state,
                kind,
                rh: Some(rh),
                eigenvalues: rh.roots(),
                stability,
                critical: false,
            }
        }
    }
}

/// All coexistence equilibria at the operating point of `p`, sorted by `S*`.
pub fn find_coexistence(p: &ModelParams) -> Result<Vec<Equilibrium>> {
    p.validate()?;
    let (Some(dom1), Some(dom2)) = (curve_domain(Species::One, p), curve_domain(Species::Two, p)) else {
        return Ok(Vec::new());
    };
    // g(x2) = F2(F1(x2)) - x2, undefined where F1(x2) leaves the domain of F2
    let g = |x2: f64| -> Option<f64> {
        let x1 = f_curve_raw(Species::One, x2, p);
        if !(x1 >= dom2.x_lo && x1 <= dom2.x_hi) {
            return None;
        }
        Some(f_curve_raw(Species::Two, x1, p) - x2)
    };

    let n = SCAN_POINTS;
    let width = dom1.x_hi - dom1.x_lo;
    let grid: Vec<f64> = (0..n).map(|k| dom1.x_lo + width * k as f64 / (n - 1) as f64).collect();
    let values: Vec<Option<f64>> = grid.iter().map(|&x| g(x)).collect();

    let mut roots: Vec<(f64, bool)> = Vec::new();
    for k in 0..n - 1 {
        // refine every cell that touches a defined value so brackets near the
        // edge of the definition set are not lost
        if values[k].is_none() && values[k + 1].is_none() {
            continue;
        }
        let (a, b) = (grid[k], grid[k + 1]);
        let coarse: Vec<(f64, Option<f64>)> = (0..=SCAN_REFINE)
            .map(|s| {
                let x = a + (b - a) * s as f64 / SCAN_REFINE as f64;
                (x, g(x))
            })
            .collect();
        // where g becomes defined, add a sample at the edge of the definition
        // set: F2 vanishes there, so g = -x2 < 0 and steep roots right next to
        // the edge get bracketed
        let mut sub = Vec::with_capacity(coarse.len() + 2);
        for w in coarse.windows(2) {
            sub.push(w[0]);
            if w[0].1.is_some() != w[1].1.is_some() {
                let (mut lo, mut hi) = (w[0].0, w[1].0);
                let lo_defined = w[0].1.is_some();
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if g(mid).is_some() == lo_defined {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let edge = if lo_defined { lo } else { hi };
                if let Some(ge) = g(edge) {
                    sub.push((edge, Some(ge)));
                }
            }
        }
        sub.push(*coarse.last().unwrap());
        for w in sub.windows(2) {
            if let ((xa, Some(ga)), (xb, Some(gb))) = (w[0], w[1]) {
                if ga == 0.0 {
                    roots.push((xa, false));
                } else if (ga < 0.0) != (gb < 0.0) && gb != 0.0 {
                    let r = bisect(xa, xb, |x| g(x).unwrap_or(f64::NAN));
                    roots.push((r, false));
                }
            }
        }
    }

    // tangential touches: local minima of |g| without a sign change
    for k in 1..n - 1 {
        let (Some(gl), Some(gc), Some(gr)) = (values[k - 1], values[k], values[k + 1]) else {
            continue;
        };
        if gc.abs() <= gl.abs() && gc.abs() <= gr.abs() && (gl > 0.0) == (gc > 0.0) && (gr > 0.0) == (gc > 0.0) {
            let (mut lo, mut hi) = (grid[k - 1], grid[k + 1]);
            let phi = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..100 {
                let m1 = hi - phi * (hi - lo);
                let m2 = lo + phi * (hi - lo);
                let f1 = g(m1).map_or(f64::INFINITY, f64::abs);
                let f2 = g(m2).map_or(f64::INFINITY, f64::abs);
                if f1 < f2 {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let xm = 0.5 * (lo + hi);
            if let Some(gm) = g(xm) {
                if gm.abs() < 1e-9 * (1.0 + xm) {
                    roots.push((xm, true));
                }
            }
        }
    }

    let mut found: Vec<Equilibrium> = Vec::new();
    for (x2, touch) in roots {
        let x1 = f_curve_raw(Species::One, x2, p);
        let guess = state_from_biomass(x1, x2, p);
        let state = if touch {
            // Newton is singular at a double root; keep the scanned point
            guess
        } else {
            match polish_coexistence(&guess, p) {
                Ok(s) => s,
                Err(_) => guess,
            }
        };
        if !(state.x1 > 0.0 && state.x2 > 0.0 && state.s > 0.0) {
            continue;
        }
        if let Some(prev) = found.iter_mut().find(|e| e.state.distance(&state) < MERGE_TOL) {
            prev.critical = true;
            continue;
        }
        let mut eq = classify(state, EquilibriumKind::Coexistence, p);
        eq.critical = touch;
        found.push(eq);
    }
    found.sort_by(|a, b| a.state.s.partial_cmp(&b.state.s).unwrap());
    Ok(found)
}

/// Washout followed by the coexistence equilibria.
pub fn all_equilibria(p: &ModelParams) -> Result<Vec<Equilibrium>> {
    let mut v = vec![Equilibrium::washout(p)];
    v.extend(find_coexistence(p)?);
    Ok(v)
}

/// Sign chart of the planar system obtained without mortality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReducedRegion {
    /// `x1' < 0`, `x2' > 0`
    I,
    /// `x1' < 0`, `x2' < 0`
    II,
    /// `x1' > 0`, `x2' < 0`
    III,
    /// `x1' > 0`, `x2' > 0`; only present when the nullclines intersect
    IV,
    OnCurve,
}

/// Growth excesses `(f1 - D, f2 - D)` of the planar system at `(x1, x2)`.
pub fn reduced_field(x1: f64, x2: f64, p: &ModelParams) -> Result<(f64, f64)> {
    if p.has_mortality() {
        return Err(Error::Unsupported(
            "the planar reduction requires a = (0, 0) and alpha = (1, 1)".into(),
        ));
    }
    if !(x1 >= 0.0 && x2 >= 0.0 && x1 + x2 <= p.s_in()) {
        return Err(Error::Domain(format!("({x1}, {x2}) outside the simplex")));
    }
    let s = p.s_in() - x1 - x2;
    Ok((
        growth_raw(Species::One, s, x2, p) - p.d(),
        growth_raw(Species::Two, s, x1, p) - p.d(),
    ))
}

pub fn reduced_region(x1: f64, x2: f64, p: &ModelParams) -> Result<ReducedRegion> {
    let (g1, g2) = reduced_field(x1, x2, p)?;
    const EPS: f64 = 1e-12;
    if g1.abs() <= EPS || g2.abs() <= EPS {
        return Ok(ReducedRegion::OnCurve);
    }
    // the biomass factors only scale the sign for x > 0; on the axes the
    // growth excess carries the sign of the nearby interior
    Ok(match (g1 > 0.0, g2 > 0.0) {
        (false, true) => ReducedRegion::I,
        (false, false) => ReducedRegion::II,
        (true, false) => ReducedRegion::III,
        (true, true) => ReducedRegion::IV,
    })
}

/// Jacobian of the vector field at an equilibrium state.
pub fn equilibrium_jacobian(eq: &Equilibrium, p: &ModelParams) -> Matrix3<f64> {
    jacobian(&eq.state, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rhs;

    fn at(s_in: f64, d: f64) -> ModelParams {
        ModelParams::default().with_operating(s_in, d).unwrap()
    }

    #[test]
    fn phi_vanishes_at_both_ends() {
        let p = at(3.0, 0.2);
        for i in Species::BOTH {
            let bound = p.s_in() / p.theta(i.partner());
            assert_eq!(phi(i, 0.0, &p).unwrap(), 0.0);
            assert!(phi(i, bound, &p).unwrap().abs() < 1e-15);
            assert!(phi(i, bound * 1.01, &p).is_err());
        }
    }

    #[test]
    fn phi_maximum_matches_dense_scan() {
        let p = at(3.0, 0.2);
        for i in Species::BOTH {
            let bound = p.s_in() / p.theta(i.partner());
            let n = 10_000;
            let (mut best, mut arg) = (f64::MIN, 0.0);
            let mut increasing_changes = 0;
            let mut prev = 0.0;
            let mut prev_up = true;
            for k in 1..n {
                let x = bound * k as f64 / n as f64;
                let v = phi(i, x, &p).unwrap();
                if v > best {
                    best = v;
                    arg = x;
                }
                let up = v > prev;
                if up != prev_up {
                    increasing_changes += 1;
                }
                prev_up = up;
                prev = v;
            }
            assert_eq!(increasing_changes, 1, "phi must be unimodal");
            assert!((phi_argmax(i, &p) - arg).abs() < 2.0 * bound / n as f64);
        }
    }

    #[test]
    fn phi_roots_solve_level_equation() {
        let p = at(3.0, 0.2);
        for i in Species::BOTH {
            let (lo, hi) = phi_roots(i, &p).unwrap();
            assert!(lo < hi);
            let level = p.removal_rate(i);
            assert!((phi(i, lo, &p).unwrap() - level).abs() < 1e-10);
            assert!((phi(i, hi, &p).unwrap() - level).abs() < 1e-10);
            assert!(phi_discriminant(i, &p) > 0.0);
        }
    }

    #[test]
    fn f_curve_vanishes_at_domain_ends() {
        let p = at(3.0, 0.2);
        for i in Species::BOTH {
            let dom = curve_domain(i, &p).unwrap();
            assert!(f_curve(i, dom.x_lo, &p).unwrap().abs() < 1e-10);
            assert!(f_curve(i, dom.x_hi, &p).unwrap().abs() < 1e-10);
            assert!(matches!(f_curve(i, dom.x_hi * 1.1, &p), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn f_curve_satisfies_implicit_equation() {
        let p = at(3.0, 0.2);
        for i in Species::BOTH {
            let dom = curve_domain(i, &p).unwrap();
            for k in 0..=200 {
                let xj = dom.x_lo + (dom.x_hi - dom.x_lo) * k as f64 / 200.0;
                let xi = f_curve(i, xj, &p).unwrap();
                let s = p.s_in() - p.theta(i) * xi - p.theta(i.partner()) * xj;
                let r = growth_raw(i, s, xj, &p) - p.removal_rate(i);
                assert!(r.abs() < 1e-10, "residual {r}");
            }
        }
    }

    #[test]
    fn f_curve_derivatives_agree() {
        let p = at(3.0, 0.2);
        for i in Species::BOTH {
            let dom = curve_domain(i, &p).unwrap();
            let mut sign_changes = 0;
            let mut prev: Option<f64> = None;
            for k in 1..400 {
                let xj = dom.x_lo + (dom.x_hi - dom.x_lo) * k as f64 / 400.0;
                let a = f_curve_deriv(i, xj, &p).unwrap();
                let b = f_curve_deriv_partials(i, xj, &p).unwrap();
                assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-6), "{a} vs {b}");
                let h = 1e-6 * (dom.x_hi - dom.x_lo);
                let fd = (f_curve_raw(i, xj + h, &p) - f_curve_raw(i, xj - h, &p)) / (2.0 * h);
                assert!((fd - a).abs() <= 1e-6 * a.abs().max(1e-3));
                if let Some(q) = prev {
                    if (q > 0.0) != (a > 0.0) {
                        sign_changes += 1;
                    }
                }
                prev = Some(a);
            }
            assert_eq!(sign_changes, 1);
        }
    }

    #[test]
    fn two_unstable_equilibria_at_reference_point() {
        let p = at(3.0, 0.2);
        let eqs = find_coexistence(&p).unwrap();
        assert_eq!(eqs.len(), 2);
        let (e1, e2) = (&eqs[0], &eqs[1]);
        assert_eq!(e1.stability, Stability::Unstable);
        assert_eq!(e2.stability, Stability::Unstable);
        let rh1 = e1.rh.unwrap();
        assert!(rh1.c3 > 0.0 && rh1.c4 < 0.0);
        let (mu, nu) = e1.complex_pair().unwrap();
        assert!(mu > 0.0 && nu > 0.0);
        assert!(e2.rh.unwrap().c3 < 0.0);
        for e in &eqs {
            assert!(rhs(&e.state, &p).to_vector().norm() < 1e-11);
        }
    }

    #[test]
    fn no_mortality_below_fold_has_no_coexistence() {
        let p = ModelParams::no_mortality().with_operating(0.1, 0.2).unwrap();
        assert!(find_coexistence(&p).unwrap().is_empty());
    }

    #[test]
    fn stable_branch_above_hopf() {
        let p = at(3.5, 0.195);
        let eqs = find_coexistence(&p).unwrap();
        assert_eq!(eqs.len(), 2);
        assert_eq!(eqs[0].stability, Stability::Les);
        assert_eq!(eqs[1].stability, Stability::Unstable);
        assert!(eqs[0].state.x1 > eqs[1].state.x1 && eqs[0].state.x2 > eqs[1].state.x2);
    }

    #[test]
    fn below_fold_with_mortality_is_empty() {
        let p = at(2.0, 0.2);
        assert!(find_coexistence(&p).unwrap().is_empty());
    }

    #[test]
    fn washout_spectrum() {
        let p = at(3.0, 0.195);
        let w = classify(State::washout(&p), EquilibriumKind::Washout, &p);
        let re: Vec<f64> = w.eigenvalues.iter().map(|z| z.re).collect();
        assert!((re[0] + 0.195).abs() < 1e-15);
        assert!((re[1] + 0.995).abs() < 1e-15);
        assert!((re[2] + 1.695).abs() < 1e-15);
        assert!(w.stability.is_stable());
    }

    #[test]
    fn closed_form_coefficients_match_jacobian() {
        let p = at(3.0, 0.2);
        for e in find_coexistence(&p).unwrap() {
            let rh = e.rh.unwrap();
            let gen = RouthHurwitz::from_matrix(&jacobian(&e.state, &p));
            assert!((rh.c1 - gen.c1).abs() < 1e-10);
            assert!((rh.c2 - gen.c2).abs() < 1e-10);
            assert!((rh.c3 + jacobian(&e.state, &p).determinant()).abs() < 1e-10 * (1.0 + rh.c3.abs()));
            let c4 = RouthHurwitz::c4_expanded(&e.state, &p);
            assert!((c4 - rh.c4).abs() < 1e-10 * (1.0 + c4.abs()));
            // the jacobian at a coexistence point has a zero diagonal block
            let j = jacobian(&e.state, &p);
            assert!(j[(1, 1)].abs() < 1e-11 && j[(2, 2)].abs() < 1e-11);
        }
    }

    #[test]
    fn reduced_region_labels() {
        let p = ModelParams::no_mortality().with_operating(0.1, 0.2).unwrap();
        assert_eq!(reduced_region(1e-3, 1e-3, &p).unwrap(), ReducedRegion::II);
        assert!(matches!(
            reduced_region(0.01, 0.01, &ModelParams::default()),
            Err(Error::Unsupported(_))
        ));
        // a point on gamma_1 of the no-mortality model
        let p = ModelParams::no_mortality().with_operating(2.0, 0.2).unwrap();
        let dom = curve_domain(Species::One, &p).unwrap();
        let x2 = 0.5 * (dom.x_lo + dom.x_hi);
        let x1 = f_curve(Species::One, x2, &p).unwrap();
        let (g1, _) = reduced_field(x1, x2, &p).unwrap();
        assert!(g1.abs() < 1e-12);
        assert_eq!(reduced_region(x1, x2, &p).unwrap(), ReducedRegion::OnCurve);
    }
}
