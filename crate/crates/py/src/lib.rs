//! Python bindings. Every function takes the operating point as keywords
//! and an optional TOML parameter file for the rest.

use mt::branch::{BifurcationEvent, Branch, EventKind};
use mt::cycles::{self, CycleStability, FamilyOptions};
use mt::dynamics::{self, AttractorKind, AttractorLabel, ClassifyOptions, GridSpec};
use mt::equilibria::{all_equilibria, find_coexistence, EquilibriumKind};
use mt::{config, ModelParams, OperatingParam, State};
use mutualism as mt;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: mt::Error) -> PyErr {
    match e {
        mt::Error::InvalidParams(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn params(config: Option<&str>, s_in: Option<f64>, d: Option<f64>) -> PyResult<ModelParams> {
    let p = match config {
        Some(path) => config::load_params(path).map_err(err)?,
        None => ModelParams::default(),
    };
    let p = if s_in.is_some() || d.is_some() {
        p.with_operating(s_in.unwrap_or(p.s_in()), d.unwrap_or(p.d())).map_err(err)?
    } else {
        p
    };
    p.validate().map_err(err)?;
    Ok(p)
}

fn free_param(name: &str) -> PyResult<OperatingParam> {
    match name {
        "sin" | "s_in" => Ok(OperatingParam::SIn),
        "d" | "D" => Ok(OperatingParam::D),
        _ => Err(PyValueError::new_err(format!("unknown parameter {name:?}, expected 'sin' or 'd'"))),
    }
}

fn triple(x: &State) -> (f64, f64, f64) {
    (x.s, x.x1, x.x2)
}

fn label_dict<'py>(py: Python<'py>, l: &AttractorLabel) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("tag", l.tag())?;
    out.set_item("transient", l.transient)?;
    match &l.kind {
        AttractorKind::Equilibrium { index, state } => {
            out.set_item("kind", "equilibrium")?;
            out.set_item("index", index)?;
            out.set_item("state", triple(state))?;
        }
        AttractorKind::Cycle { period, reference } => {
            out.set_item("kind", "cycle")?;
            out.set_item("period", period)?;
            out.set_item("state", triple(reference))?;
        }
        AttractorKind::Unresolved => out.set_item("kind", "unresolved")?,
    }
    Ok(out)
}

/// All equilibria (washout first) with stability and eigenvalues.
#[pyfunction]
#[pyo3(signature = (*, s_in=None, d=None, config=None))]
fn equilibria(py: Python<'_>, s_in: Option<f64>, d: Option<f64>, config: Option<&str>) -> PyResult<Vec<Py<PyDict>>> {
    let p = params(config, s_in, d)?;
    let eqs = all_equilibria(&p).map_err(err)?;
    eqs.iter()
        .map(|e| {
            let out = PyDict::new(py);
            out.set_item("state", triple(&e.state))?;
            let kind = match e.kind {
                EquilibriumKind::Washout => "washout",
                EquilibriumKind::Coexistence => "coexistence",
            };
            out.set_item("kind", kind)?;
            out.set_item("stable", e.stability.is_stable())?;
            out.set_item("critical", e.critical)?;
            let ev: Vec<(f64, f64)> = e.eigenvalues.iter().map(|z| (z.re, z.im)).collect();
            out.set_item("eigenvalues", ev)?;
            if let Some(rh) = e.rh {
                out.set_item("c", (rh.c1, rh.c2, rh.c3, rh.c4))?;
            }
            Ok(out.unbind())
        })
        .collect()
}

/// Trajectory from `x0 = (S, x1, x2)`; returns `(times, states)`.
#[pyfunction]
#[pyo3(signature = (x0, t_end, *, s_in=None, d=None, tol=dynamics::DEFAULT_TOL, config=None))]
fn simulate(
    x0: (f64, f64, f64),
    t_end: f64,
    s_in: Option<f64>,
    d: Option<f64>,
    tol: f64,
    config: Option<&str>,
) -> PyResult<(Vec<f64>, Vec<(f64, f64, f64)>)> {
    let p = params(config, s_in, d)?;
    let traj = dynamics::integrate(&State::new(x0.0, x0.1, x0.2), &p, t_end, tol).map_err(err)?;
    Ok((traj.times, traj.states.iter().map(triple).collect()))
}

/// Attractor reached from `x0`.
#[pyfunction]
#[pyo3(signature = (x0, *, s_in=None, d=None, budget=dynamics::DEFAULT_BUDGET, config=None))]
fn classify(
    py: Python<'_>,
    x0: (f64, f64, f64),
    s_in: Option<f64>,
    d: Option<f64>,
    budget: f64,
    config: Option<&str>,
) -> PyResult<Py<PyDict>> {
    let p = params(config, s_in, d)?;
    let l = dynamics::classify_attractor(&State::new(x0.0, x0.1, x0.2), &p, &ClassifyOptions::with_budget(budget))
        .map_err(err)?;
    Ok(label_dict(py, &l)?.unbind())
}

/// Attractor labels on an `n x n` grid of `(x1, x2)` at `S = S_in / 2`.
#[pyfunction]
#[pyo3(signature = (*, s_in=None, d=None, n=21, budget=dynamics::DEFAULT_BUDGET, config=None))]
fn basin(
    py: Python<'_>,
    s_in: Option<f64>,
    d: Option<f64>,
    n: usize,
    budget: f64,
    config: Option<&str>,
) -> PyResult<Vec<Py<PyDict>>> {
    let p = params(config, s_in, d)?;
    let grid = GridSpec { n1: n, n2: n, ..GridSpec::default_for(&p) };
    let map = py
        .allow_threads(|| dynamics::basin_map(&grid, &p, &ClassifyOptions::with_budget(budget)))
        .map_err(err)?;
    map.cells
        .iter()
        .map(|c| {
            let out = label_dict(py, &c.label)?;
            out.set_item("initial", triple(&c.initial))?;
            Ok(out.unbind())
        })
        .collect()
}

fn events<'py>(py: Python<'py>, evs: &[BifurcationEvent]) -> PyResult<Vec<Bound<'py, PyDict>>> {
    evs.iter()
        .map(|e| {
            let out = PyDict::new(py);
            out.set_item("kind", e.kind.label())?;
            out.set_item("param", e.param)?;
            out.set_item("period", e.period)?;
            out.set_item("test", e.test)?;
            out.set_item("state", e.state.as_ref().map(triple))?;
            Ok(out)
        })
        .collect()
}

fn equilibrium_branch(p: &ModelParams, free: OperatingParam, range: (f64, f64)) -> PyResult<Branch> {
    for end in [range.1, range.0] {
        let q = match free {
            OperatingParam::SIn => p.with_operating(end, p.d()),
            OperatingParam::D => p.with_operating(p.s_in(), end),
        }
        .map_err(err)?;
        if let Some(e) = find_coexistence(&q).map_err(err)?.first() {
            return mt::branch::continue_equilibria(&e.state, &q, free, range, &mt::branch::equilibrium_policy()).map_err(err);
        }
    }
    Err(PyRuntimeError::new_err(format!(
        "no coexistence equilibrium at either end of [{}, {}]",
        range.0, range.1
    )))
}

/// Coexistence branch in `free` over `[lo, hi]` with its LP and H events.
#[pyfunction]
#[pyo3(signature = (free, lo, hi, *, s_in=None, d=None, config=None))]
fn branch(
    py: Python<'_>,
    free: &str,
    lo: f64,
    hi: f64,
    s_in: Option<f64>,
    d: Option<f64>,
    config: Option<&str>,
) -> PyResult<Py<PyDict>> {
    let p = params(config, s_in, d)?;
    let b = equilibrium_branch(&p, free_param(free)?, (lo.min(hi), lo.max(hi)))?;
    let out = PyDict::new(py);
    out.set_item("param", b.points.iter().map(|q| q.param).collect::<Vec<_>>())?;
    out.set_item("state", b.points.iter().map(|q| triple(&q.state)).collect::<Vec<_>>())?;
    out.set_item("stable", b.points.iter().map(|q| q.is_stable()).collect::<Vec<_>>())?;
    out.set_item("events", events(py, &b.events)?)?;
    Ok(out.unbind())
}

/// Cycle family born at the first Hopf point of the `S_in` branch on `[lo, hi]`.
#[pyfunction]
#[pyo3(signature = (lo, hi, *, d=None, config=None))]
fn cycles_from_hopf(py: Python<'_>, lo: f64, hi: f64, d: Option<f64>, config: Option<&str>) -> PyResult<Py<PyDict>> {
    let p = params(config, None, d)?;
    let range = (lo.min(hi), lo.max(hi));
    let b = equilibrium_branch(&p, OperatingParam::SIn, range)?;
    let h = b
        .events_of(EventKind::Hopf)
        .next()
        .ok_or_else(|| PyRuntimeError::new_err(format!("no Hopf point at D = {}", p.d())))?
        .clone();
    let fam = py
        .allow_threads(|| {
            let start = cycles::cycle_from_hopf(&h, &p, cycles::DEFAULT_SEED_RADIUS)?;
            cycles::continue_cycles(&start, &p, range, &FamilyOptions::default())
        })
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("param", fam.cycles.iter().map(|c| c.param).collect::<Vec<_>>())?;
    out.set_item("period", fam.cycles.iter().map(|c| c.period).collect::<Vec<_>>())?;
    out.set_item("stable", fam.cycles.iter().map(|c| c.stability == CycleStability::Stable).collect::<Vec<_>>())?;
    out.set_item("events", events(py, &fam.events)?)?;
    out.set_item("stop", fam.stop)?;
    Ok(out.unbind())
}

#[pymodule(name = "mutualism")]
fn py_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(equilibria, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(basin, m)?)?;
    m.add_function(wrap_pyfunction!(branch, m)?)?;
    m.add_function(wrap_pyfunction!(cycles_from_hopf, m)?)?;
    Ok(())
}
