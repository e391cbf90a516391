#![allow(dead_code)]

use mutualism::model::{GrowthParams, OperatingParams, RemovalParams};
use mutualism::ModelParams;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Parameters scattered around the reference set, mortality included.
pub fn draw(r: &mut impl Rng) -> ModelParams {
    let p = ModelParams {
        growth: GrowthParams {
            m: [r.gen_range(2.0..6.0), r.gen_range(2.0..6.0)],
            k: [r.gen_range(0.05..0.5), r.gen_range(0.05..0.5)],
            l: [r.gen_range(0.1..0.5), r.gen_range(0.1..0.5)],
        },
        removal: RemovalParams {
            alpha: [r.gen_range(0.6..1.0), r.gen_range(0.6..1.0)],
            a: [r.gen_range(0.0..1.5), r.gen_range(0.0..1.5)],
        },
        operating: OperatingParams { s_in: r.gen_range(1.0..6.0), d: r.gen_range(0.05..0.5) },
    };
    p.validate().expect("drawn parameters are valid");
    p
}

/// Same growth ranges with `a = 0` and `alpha = 1`.
pub fn draw_no_mortality(r: &mut impl Rng) -> ModelParams {
    let mut p = draw(r);
    p.removal = RemovalParams { alpha: [1.0, 1.0], a: [0.0, 0.0] };
    p
}

/// A no-mortality draw with washout as the only equilibrium. Feed is drawn
/// low so rejection terminates quickly.
pub fn draw_j0(r: &mut impl Rng) -> ModelParams {
    for _ in 0..10_000 {
        let mut p = draw_no_mortality(r);
        p.operating.s_in = r.gen_range(0.05..1.0);
        if mutualism::equilibria::find_coexistence(&p).is_ok_and(|e| e.is_empty()) {
            return p;
        }
    }
    panic!("no parameter set without coexistence found");
}
