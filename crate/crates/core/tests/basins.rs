use mutualism::dynamics::{basin_map, AttractorKind, BasinMap, ClassifyOptions, GridSpec};
use mutualism::ModelParams;

fn map(p: &ModelParams, n: usize) -> BasinMap {
    let grid = GridSpec { n1: n, n2: n, ..GridSpec::default_for(p) };
    basin_map(&grid, p, &ClassifyOptions::default()).unwrap()
}

fn equilibrium_index(kind: &AttractorKind) -> Option<usize> {
    match kind {
        AttractorKind::Equilibrium { index, .. } => Some(*index),
        _ => None,
    }
}

#[test]
fn washout_and_cycle_between_period_doubling_and_hopf() {
    let p = ModelParams::default().with_operating(3.285, 0.195).unwrap();
    let m = map(&p, 11);
    let labels = m.distinct(0.05);
    assert_eq!(labels.len(), 2, "{:?}", labels.iter().map(|l| l.tag()).collect::<Vec<_>>());
    assert!(labels.iter().any(|l| equilibrium_index(&l.kind) == Some(0)));
    assert!(labels.iter().any(|l| l.period().is_some()));
}

#[test]
fn washout_and_coexistence_past_the_homoclinic() {
    let p = ModelParams::default().with_operating(3.2, 0.23).unwrap();
    let m = map(&p, 11);
    let mut idx: Vec<usize> = m.distinct(0.05).iter().filter_map(|l| equilibrium_index(&l.kind)).collect();
    idx.sort();
    assert_eq!(idx, vec![0, 1]);
    assert!(m.cells.iter().all(|c| !matches!(c.label.kind, AttractorKind::Unresolved)));
}

#[test]
fn everything_washes_out_below_the_no_mortality_fold() {
    let p = ModelParams::no_mortality().with_operating(0.1, 0.2).unwrap();
    let m = map(&p, 21);
    assert_eq!(m.cells.len(), 441);
    assert!(m.cells.iter().all(|c| equilibrium_index(&c.label.kind) == Some(0)));
}
