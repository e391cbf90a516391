use mutualism::dynamics::integrate;
use mutualism::equilibria::{f_curve_deriv, find_coexistence, Partials};
use mutualism::model::{growth, growth_partials, jacobian, omega_bound, rhs, GrowthParams, OperatingParams, RemovalParams};
use mutualism::{ModelParams, Species, State};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = ModelParams> {
    (
        (2.0..6.0f64, 2.0..6.0f64, 0.05..0.5f64, 0.05..0.5f64, 0.1..0.5f64, 0.1..0.5f64),
        (0.6..1.0f64, 0.6..1.0f64, 0.0..1.5f64, 0.0..1.5f64),
        (1.0..6.0f64, 0.05..0.5f64),
    )
        .prop_map(|((m1, m2, k1, k2, l1, l2), (al1, al2, a1, a2), (s_in, d))| ModelParams {
            growth: GrowthParams { m: [m1, m2], k: [k1, k2], l: [l1, l2] },
            removal: RemovalParams { alpha: [al1, al2], a: [a1, a2] },
            operating: OperatingParams { s_in, d },
        })
}

fn no_mortality() -> impl Strategy<Value = ModelParams> {
    params().prop_map(|mut p| {
        p.removal = RemovalParams { alpha: [1.0, 1.0], a: [0.0, 0.0] };
        p
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn coexistence_equilibria_are_interior_and_sorted(p in params()) {
        let eqs = find_coexistence(&p).unwrap();
        for e in &eqs {
            let x = e.state;
            prop_assert!(x.s > 0.0 && x.x1 > 0.0 && x.x2 > 0.0, "{x:?}");
            prop_assert!(rhs(&x, &p).to_vector().amax() < 1e-10);
            let rh = e.rh.unwrap();
            prop_assert!(rel(rh.c3, -jacobian(&x, &p).determinant()) < 1e-8);
        }
        prop_assert!(eqs.windows(2).all(|w| w[0].state.s <= w[1].state.s));
    }

    #[test]
    fn stable_equilibria_have_subunit_slope_product(p in params()) {
        for e in find_coexistence(&p).unwrap().iter().filter(|e| e.stability.is_stable()) {
            let f1 = f_curve_deriv(Species::One, e.state.x2, &p).unwrap();
            let f2 = f_curve_deriv(Species::Two, e.state.x1, &p).unwrap();
            prop_assert!(f1 * f2 < 1.0, "F1' F2' = {}", f1 * f2);
        }
    }

    #[test]
    fn no_mortality_partials_identity(p in no_mortality()) {
        for e in find_coexistence(&p).unwrap() {
            let x = e.state;
            let pd = Partials::at(&x, &p);
            let f1 = f_curve_deriv(Species::One, x.x2, &p).unwrap();
            let f2 = f_curve_deriv(Species::Two, x.x1, &p).unwrap();
            let lhs = pd.f * pd.g + pd.e * pd.h - pd.g * pd.h;
            let rhs_ = (1.0 - f1 * f2) * pd.e * pd.f;
            prop_assert!((lhs - rhs_).abs() <= 1e-8 * (pd.g * pd.h).abs().max(lhs.abs()), "{lhs} vs {rhs_}");
        }
    }

    #[test]
    fn growth_hypotheses(p in params(), s in 1e-3..5.0f64, y in 1e-3..5.0f64) {
        for i in Species::BOTH {
            let (ds, dy) = growth_partials(i, s, y, &p).unwrap();
            prop_assert!(ds > 0.0 && dy > 0.0);
            prop_assert_eq!(growth(i, 0.0, y, &p).unwrap(), 0.0);
            prop_assert_eq!(growth(i, s, 0.0, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences(p in params(), s in 0.01..3.0f64, x1 in 0.01..2.0f64, x2 in 0.01..2.0f64) {
        let x = State::new(s, x1, x2);
        let j = jacobian(&x, &p);
        for c in 0..3 {
            let h = 1e-6 * (1.0 + x.to_vector()[c].abs());
            let mut up = x.to_vector();
            let mut dn = x.to_vector();
            up[c] += h;
            dn[c] -= h;
            let col = (rhs(&State::from_vector(&up), &p).to_vector() - rhs(&State::from_vector(&dn), &p).to_vector()) / (2.0 * h);
            for r in 0..3 {
                let scale = j.column(c).amax().max(1e-3);
                prop_assert!((col[r] - j[(r, c)]).abs() <= 1e-6 * scale, "J[{r},{c}] {} vs {}", j[(r, c)], col[r]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trajectories_stay_in_the_absorbing_set(p in params(), u in 0.0..1.0f64, v in 0.0..1.0f64, w in 0.0..1.0f64) {
        // a point of the simplex {S + x1 + x2 <= bound}
        let bound = omega_bound(&p);
        let total = u + v + w + 1e-9;
        let x0 = State::new(bound * u / total * 0.99, bound * v / total * 0.99, bound * w / total * 0.99);
        prop_assume!(x0.in_omega(&p, 0.0));
        let traj = integrate(&x0, &p, 200.0, 1e-9).unwrap();
        for x in &traj.states {
            prop_assert!(x.in_omega(&p, 1e-8), "{x:?} left the absorbing set");
        }
    }
}
