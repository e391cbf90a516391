//! Parameters, growth laws, vector field and Jacobian of the rescaled
//! two-species mutualism chemostat
//!
//! ```text
//! S'  = D (S_in - S) - f1(S, x2) x1 - f2(S, x1) x2
//! x1' = (f1(S, x2) - D1) x1
//! x2' = (f2(S, x1) - D2) x2
//! ```
//!
//! with `f_i(S, x_j) = m_i S / (K_i + S) * x_j / (L_i + x_j)` and removal
//! rates `D_i = alpha_i D + a_i`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Species index. `One` grows on the partner biomass `x2`, `Two` on `x1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Species {
    One,
    Two,
}

impl Species {
    pub const BOTH: [Species; 2] = [Species::One, Species::Two];

    pub fn index(self) -> usize {
        match self {
            Species::One => 0,
            Species::Two => 1,
        }
    }

    pub fn partner(self) -> Species {
        match self {
            Species::One => Species::Two,
            Species::Two => Species::One,
        }
    }

    /// Accepts the 1-based labels used in configs and on the command line.
    pub fn from_number(i: usize) -> Result<Species> {
        match i {
            1 => Ok(Species::One),
            2 => Ok(Species::Two),
            _ => Err(Error::Domain(format!("species index must be 1 or 2, got {i}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthParams {
    /// Maximum growth rates `m_i`.
    pub m: [f64; 2],
    /// Substrate half-saturation constants `K_i`.
    pub k: [f64; 2],
    /// Partner half-saturation constants `L_i`.
    pub l: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovalParams {
    /// Fraction of the dilution rate acting on each species, in `[0, 1]`.
    pub alpha: [f64; 2],
    /// Specific mortality rates.
    pub a: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingParams {
    pub s_in: f64,
    pub d: f64,
}

/// Operating parameter that continuation drivers may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatingParam {
    #[serde(rename = "sin")]
    SIn,
    #[serde(rename = "d")]
    D,
}

impl OperatingParam {
    pub fn name(self) -> &'static str {
        match self {
            OperatingParam::SIn => "S_in",
            OperatingParam::D => "D",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub growth: GrowthParams,
    pub removal: RemovalParams,
    pub operating: OperatingParams,
}

impl Default for ModelParams {
    /// Reference parameter set with mortality `a = (0.8, 1.5)`, `D = 0.2`, `S_in = 3`.
    fn default() -> Self {
        ModelParams {
            growth: GrowthParams {
                m: [4.0, 4.0],
                k: [0.2, 0.1],
                l: [0.3, 0.2],
            },
            removal: RemovalParams {
                alpha: [1.0, 1.0],
                a: [0.8, 1.5],
            },
            operating: OperatingParams { s_in: 3.0, d: 0.2 },
        }
    }
}

impl ModelParams {
    /// Reference growth parameters without mortality (`D_1 = D_2 = D`).
    pub fn no_mortality() -> Self {
        let mut p = ModelParams::default();
        p.removal.a = [0.0, 0.0];
        p
    }

    /// Same parameters at another operating point; checked.
    pub fn with_operating(&self, s_in: f64, d: f64) -> Result<Self> {
        let mut p = *self;
        p.operating = OperatingParams { s_in, d };
        p.validate()?;
        Ok(p)
    }

    /// Unchecked variant for inner loops that already guarantee validity.
    pub(crate) fn at(&self, s_in: f64, d: f64) -> Self {
        let mut p = *self;
        p.operating = OperatingParams { s_in, d };
        p
    }

    pub fn get(&self, which: OperatingParam) -> f64 {
        match which {
            OperatingParam::SIn => self.operating.s_in,
            OperatingParam::D => self.operating.d,
        }
    }

    pub(crate) fn with_param(&self, which: OperatingParam, value: f64) -> Self {
        let mut p = *self;
        match which {
            OperatingParam::SIn => p.operating.s_in = value,
            OperatingParam::D => p.operating.d = value,
        }
        p
    }

    pub fn s_in(&self) -> f64 {
        self.operating.s_in
    }

    pub fn d(&self) -> f64 {
        self.operating.d
    }

    /// Removal rate `D_i = alpha_i D + a_i`.
    pub fn removal_rate(&self, i: Species) -> f64 {
        let k = i.index();
        self.removal.alpha[k] * self.operating.d + self.removal.a[k]
    }

    pub fn d1(&self) -> f64 {
        self.removal_rate(Species::One)
    }

    pub fn d2(&self) -> f64 {
        self.removal_rate(Species::Two)
    }

    pub fn d_min(&self) -> f64 {
        self.d().min(self.d1()).min(self.d2())
    }

    /// `theta_i = D_i / D`.
    pub fn theta(&self, i: Species) -> f64 {
        self.removal_rate(i) / self.d()
    }

    pub fn has_mortality(&self) -> bool {
        self.removal.a.iter().any(|&a| a != 0.0) || self.removal.alpha.iter().any(|&a| a != 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.growth;
        for k in 0..2 {
            for (name, v) in [("m", g.m[k]), ("K", g.k[k]), ("L", g.l[k])] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidParams(format!("{name}{} must be positive, got {v}", k + 1)));
                }
            }
            let alpha = self.removal.alpha[k];
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::InvalidParams(format!("alpha{} must lie in [0, 1], got {alpha}", k + 1)));
            }
            let a = self.removal.a[k];
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::InvalidParams(format!("a{} must be nonnegative, got {a}", k + 1)));
            }
        }
        let op = &self.operating;
        if !(op.s_in >= 0.0 && op.s_in.is_finite()) {
            return Err(Error::InvalidParams(format!("S_in must be nonnegative, got {}", op.s_in)));
        }
        if !(op.d > 0.0 && op.d.is_finite()) {
            return Err(Error::InvalidParams(format!("D must be positive, got {}", op.d)));
        }
        for i in Species::BOTH {
            if self.removal_rate(i) <= 0.0 {
                return Err(Error::Domain(format!(
                    "removal rate D{} vanishes (alpha = 0 and a = 0)",
                    i.index() + 1
                )));
            }
        }
        Ok(())
    }
}

/// Substrate and biomass concentrations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub s: f64,
    pub x1: f64,
    pub x2: f64,
}

impl State {
    pub const fn new(s: f64, x1: f64, x2: f64) -> Self {
        State { s, x1, x2 }
    }

    pub fn washout(p: &ModelParams) -> Self {
        State::new(p.s_in(), 0.0, 0.0)
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.s, self.x1, self.x2)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        State::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.s, self.x1, self.x2]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        State::new(v[0], v[1], v[2])
    }

    pub fn is_nonnegative(&self) -> bool {
        self.s >= 0.0 && self.x1 >= 0.0 && self.x2 >= 0.0
    }

    pub fn total(&self) -> f64 {
        self.s + self.x1 + self.x2
    }

    pub fn distance(&self, other: &State) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }

    /// Partner biomass that drives the growth of species `i`.
    pub fn partner_of(&self, i: Species) -> f64 {
        match i {
            Species::One => self.x2,
            Species::Two => self.x1,
        }
    }

    pub fn in_omega(&self, p: &ModelParams, margin: f64) -> bool {
        let tol = -margin;
        self.s >= tol && self.x1 >= tol && self.x2 >= tol && self.total() <= omega_bound(p) + margin
    }
}

fn check_nonnegative(what: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must be nonnegative, got {v}")))
    }
}

/// Unchecked growth rate, used on hot paths where inputs are known valid.
#[inline]
pub(crate) fn growth_raw(i: Species, s: f64, partner: f64, p: &ModelParams) -> f64 {
    let k = i.index();
    let g = &p.growth;
    g.m[k] * s / (g.k[k] + s) * partner / (g.l[k] + partner)
}

#[inline]
pub(crate) fn growth_partials_raw(i: Species, s: f64, partner: f64, p: &ModelParams) -> (f64, f64) {
    let k = i.index();
    let g = &p.growth;
    let ks = g.k[k] + s;
    let lx = g.l[k] + partner;
    let ds = g.m[k] * g.k[k] / (ks * ks) * partner / lx;
    let dx = g.m[k] * s / ks * g.l[k] / (lx * lx);
    (ds, dx)
}

/// Specific growth rate `f_i(S, x_partner)`.
pub fn growth(i: Species, s: f64, partner: f64, p: &ModelParams) -> Result<f64> {
    check_nonnegative("S", s)?;
    check_nonnegative("partner biomass", partner)?;
    Ok(growth_raw(i, s, partner, p))
}

/// Partial derivatives `(df_i/dS, df_i/dx_partner)`.
pub fn growth_partials(i: Species, s: f64, partner: f64, p: &ModelParams) -> Result<(f64, f64)> {
    check_nonnegative("S", s)?;
    check_nonnegative("partner biomass", partner)?;
    Ok(growth_partials_raw(i, s, partner, p))
}

/// Vector field. Defined for any real state so that Newton iterates and
/// finite-difference stencils may step slightly outside the positive orthant.
#[inline]
pub fn rhs(x: &State, p: &ModelParams) -> State {
    let f1 = growth_raw(Species::One, x.s, x.x2, p);
    let f2 = growth_raw(Species::Two, x.s, x.x1, p);
    State::new(
        p.d() * (p.s_in() - x.s) - f1 * x.x1 - f2 * x.x2,
        (f1 - p.d1()) * x.x1,
        (f2 - p.d2()) * x.x2,
    )
}

/// Analytic Jacobian of [`rhs`].
pub fn jacobian(x: &State, p: &ModelParams) -> Matrix3<f64> {
    let f1 = growth_raw(Species::One, x.s, x.x2, p);
    let f2 = growth_raw(Species::Two, x.s, x.x1, p);
    let (e, g) = growth_partials_raw(Species::One, x.s, x.x2, p);
    let (f, h) = growth_partials_raw(Species::Two, x.s, x.x1, p);
    Matrix3::new(
        -p.d() - e * x.x1 - f * x.x2,
        -f1 - h * x.x2,
        -f2 - g * x.x1,
        e * x.x1,
        f1 - p.d1(),
        g * x.x1,
        f * x.x2,
        h * x.x2,
        f2 - p.d2(),
    )
}

/// Derivative of the vector field with respect to an operating parameter.
pub fn rhs_param_derivative(x: &State, p: &ModelParams, which: OperatingParam) -> Vector3<f64> {
    match which {
        OperatingParam::SIn => Vector3::new(p.d(), 0.0, 0.0),
        OperatingParam::D => Vector3::new(
            p.s_in() - x.s,
            -p.removal.alpha[0] * x.x1,
            -p.removal.alpha[1] * x.x2,
        ),
    }
}

/// Divergence (trace of the Jacobian).
pub fn divergence(x: &State, p: &ModelParams) -> f64 {
    jacobian(x, p).trace()
}

/// Upper bound of the absorbing simplex, `D S_in / min(D, D1, D2)`.
pub fn omega_bound(p: &ModelParams) -> f64 {
    p.d() * p.s_in() / p.d_min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mortality_at(s_in: f64, d: f64) -> ModelParams {
        ModelParams::default().with_operating(s_in, d).unwrap()
    }

    #[test]
    fn growth_examples() {
        let p = ModelParams::default();
        assert_eq!(growth(Species::One, 0.0, 5.0, &p).unwrap(), 0.0);
        assert_relative_eq!(growth(Species::One, 0.2, 0.3, &p).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(growth(Species::Two, 3.0, 0.0, &p).unwrap(), 0.0);
        assert!(matches!(growth(Species::One, -1.0, 0.3, &p), Err(Error::Domain(_))));
        assert!(matches!(growth_partials(Species::Two, 0.1, -0.3, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn growth_partial_examples() {
        let p = ModelParams::default();
        let (ds, _) = growth_partials(Species::One, 0.2, 0.3, &p).unwrap();
        assert_relative_eq!(ds, 2.5, epsilon = 1e-14);
        let (_, dx) = growth_partials(Species::One, 0.0, 0.7, &p).unwrap();
        assert_eq!(dx, 0.0);
    }

    #[test]
    fn washout_is_equilibrium_with_diagonal_jacobian() {
        let p = mortality_at(3.0, 0.2);
        let w = State::washout(&p);
        assert_eq!(rhs(&w, &p), State::new(0.0, 0.0, 0.0));
        let j = jacobian(&w, &p);
        let expected = Matrix3::from_diagonal(&Vector3::new(-0.2, -1.0, -1.7));
        assert_relative_eq!(j, expected, epsilon = 1e-14);
    }

    #[test]
    fn table_fold_state_nearly_stationary() {
        let p = mortality_at(2.8504, 0.2);
        let v = rhs(&State::new(0.665, 0.191, 0.144), &p);
        assert!(v.to_vector().norm() < 1e-2, "{v:?}");
    }

    #[test]
    fn boundary_faces_are_invariant() {
        let p = ModelParams::default();
        assert_eq!(rhs(&State::new(1.0, 0.0, 0.4), &p).x1, 0.0);
        assert_eq!(rhs(&State::new(1.0, 0.3, 0.0), &p).x2, 0.0);
    }

    #[test]
    fn omega_bound_examples() {
        let free = ModelParams::no_mortality().with_operating(2.5, 0.3).unwrap();
        assert_relative_eq!(omega_bound(&free), 2.5, epsilon = 1e-15);
        let p = mortality_at(3.0, 0.2);
        assert_relative_eq!(omega_bound(&p), 3.0, epsilon = 1e-15);
        assert_relative_eq!(p.d1(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(p.d2(), 1.7, epsilon = 1e-15);
    }

    #[test]
    fn vanishing_removal_rate_is_rejected() {
        let mut p = ModelParams::no_mortality();
        p.removal.alpha = [0.0, 1.0];
        assert!(matches!(p.validate(), Err(Error::Domain(_))));
        p.removal.a = [0.1, 0.0];
        assert!(p.validate().is_ok());
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut p = ModelParams::default();
        p.removal.alpha[1] = 1.5;
        assert!(p.validate().is_err());
        assert!(ModelParams::default().with_operating(-1.0, 0.2).is_err());
        assert!(ModelParams::default().with_operating(1.0, 0.0).is_err());
    }
}
