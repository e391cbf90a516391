use mutualism::atlas::{classify_regions, equilibrium_curves, sample_det, CurveKind, Window, TAXONOMY};
use mutualism::plot::operating_diagram_svg;
use mutualism::ModelParams;

fn label_at(s_in: f64, d: f64) -> String {
    let w = Window::new(s_in - 0.01, s_in + 0.01, d - 0.001, d + 0.001).unwrap();
    let g = classify_regions(&ModelParams::default(), &w, 1, 1, None);
    assert!(!g.cells[0].flagged);
    g.cells[0].label.clone()
}

#[test]
fn reference_points() {
    assert_eq!(label_at(2.0, 0.3), "J0");
    assert_eq!(label_at(3.0, 0.2), "J1^0");
    assert_eq!(label_at(3.5, 0.2), "J2^0");
}

#[test]
fn label_changes_bracket_curve_crossings() {
    let base = ModelParams::default();
    let window = Window::new(2.0, 4.0, 0.0, 0.8).unwrap();
    let curves = equilibrium_curves(&base, &window).unwrap();
    let row = Window::new(2.0, 4.0, 0.199, 0.201).unwrap();
    let nx = 80;
    let grid = classify_regions(&base, &row, nx, 1, None);
    let width = 2.0 / nx as f64;
    let changes: Vec<(f64, String, String)> = grid
        .cells
        .windows(2)
        .filter(|w| w[0].label != w[1].label)
        .map(|w| (0.5 * (w[0].s_in + w[1].s_in), w[0].label.clone(), w[1].label.clone()))
        .collect();
    assert_eq!(changes.len(), 2, "{changes:?}");
    for (kind, (at, from, to)) in [CurveKind::Lp, CurveKind::Hopf].into_iter().zip(&changes) {
        let curve = curves.iter().find(|c| c.kind == kind).unwrap();
        let crossing = curve
            .crossings_at(0.2)
            .into_iter()
            .min_by(|a, b| (a - at).abs().total_cmp(&(b - at).abs()))
            .unwrap();
        assert!((crossing - at).abs() <= width, "{kind:?} crossing {crossing} vs change {at} ({from} -> {to})");
    }
    assert!(grid.cells.iter().all(|c| TAXONOMY.contains(&c.label.as_str())));
}

#[test]
fn curves_satisfy_defining_conditions() {
    let base = ModelParams::default();
    let curves = equilibrium_curves(&base, &Window::default()).unwrap();
    let lp = curves.iter().find(|c| c.kind == CurveKind::Lp).unwrap();
    let hopf = curves.iter().find(|c| c.kind == CurveKind::Hopf).unwrap();
    for s in &lp.samples {
        let det = sample_det(&base, s).unwrap();
        assert!(det.abs() < 1e-8, "det {det} at ({}, {})", s.s_in, s.d);
    }
    for s in &hopf.samples {
        assert!(s.omega2.unwrap() > 0.0);
    }
    let svg = operating_diagram_svg(&Window::default(), &curves, &[], None);
    assert_eq!(svg, operating_diagram_svg(&Window::default(), &curves, &[], None));
    assert!(svg.contains("#0000ff") && svg.contains("#ff0000"));
}
