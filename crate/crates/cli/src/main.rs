mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use mutualism::atlas::{self, DiagramOptions, RegionCell, RegionGrid, SweepOptions, Window};
use mutualism::branch::{self, Branch};
use mutualism::config::load_params;
use mutualism::cycles::{self, CycleFamily, FamilyOptions, LimitCycle};
use mutualism::dynamics::{self, ClassifyOptions, GridSpec};
use mutualism::equilibria::{all_equilibria, find_coexistence, Equilibrium, RouthHurwitz};
use mutualism::plot;
use mutualism::{ModelParams, OperatingParam, State};

use output::{csv_writer, fmt, read_json, sibling_events, write_json};

#[derive(Parser)]
#[command(name = "mutualism", version, about = "Bifurcation analysis of a two-species mutualism chemostat")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Free {
    Sin,
    D,
}

impl From<Free> for OperatingParam {
    fn from(f: Free) -> Self {
        match f {
            Free::Sin => OperatingParam::SIn,
            Free::D => OperatingParam::D,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Equilibria with Routh–Hurwitz coefficients and spectra (JSON).
    Equilibria {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sin: Option<f64>,
        #[arg(long)]
        d: Option<f64>,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate one trajectory (CSV t,S,x1,x2).
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sin: Option<f64>,
        #[arg(long)]
        d: Option<f64>,
        #[arg(long, value_parser = parse_triple)]
        x0: [f64; 3],
        #[arg(long)]
        tend: f64,
        /// Sampling interval; accepted steps when omitted.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = dynamics::DEFAULT_TOL)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attractor label of every cell center of an initial-condition grid (CSV).
    Basin {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sin: Option<f64>,
        #[arg(long)]
        d: Option<f64>,
        /// Cells along x1 and x2.
        #[arg(long, value_parser = parse_pair_usize, default_value = "21,21")]
        grid: (usize, usize),
        #[arg(long, default_value_t = dynamics::DEFAULT_BUDGET)]
        budget: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Equilibrium branch in one operating parameter (CSV plus events JSON).
    Branch {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "sin")]
        free: Free,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        /// Fixed dilution rate when the free parameter is `sin`.
        #[arg(long)]
        d: Option<f64>,
        /// Fixed inflow concentration when the free parameter is `d`.
        #[arg(long)]
        sin: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write a one-parameter SVG diagram.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Limit-cycle family in S_in (CSV plus events JSON).
    Cycles {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        d: Option<f64>,
        /// Start at the first Hopf point of the equilibrium branch.
        #[arg(long, conflicts_with = "seed")]
        from_hopf: bool,
        /// Start from a stored cycle (a cycle object or an events file).
        #[arg(long)]
        seed: Option<PathBuf>,
        /// With `--seed` pointing at an events file: start from the cycle
        /// stored with event K instead of the last cycle.
        #[arg(long, requires = "seed")]
        seed_event: Option<usize>,
        #[arg(long, value_parser = parse_pair_f64)]
        range: (f64, f64),
        #[arg(long)]
        out: PathBuf,
        /// Also write a period SVG diagram.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Two-parameter operating diagram.
    Diagram {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_window, default_value = "0,5,0,0.8")]
        window: Window,
        #[arg(long, value_parser = parse_pair_usize, default_value = "200,160")]
        grid: (usize, usize),
        #[arg(long, default_value_t = SweepOptions::default().slices)]
        slices: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Re-render diagram.svg from the JSON and CSV written by `diagram`.
    Report {
        #[arg(long)]
        in_dir: PathBuf,
        /// Defaults to `<in-dir>/diagram.svg`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_floats(s: &str, n: usize) -> std::result::Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got {}", v.len()));
    }
    Ok(v)
}

fn parse_triple(s: &str) -> std::result::Result<[f64; 3], String> {
    let v = parse_floats(s, 3)?;
    Ok([v[0], v[1], v[2]])
}

fn parse_pair_f64(s: &str) -> std::result::Result<(f64, f64), String> {
    let v = parse_floats(s, 2)?;
    Ok((v[0], v[1]))
}

fn parse_pair_usize(s: &str) -> std::result::Result<(usize, usize), String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        [a, b] if *a > 0 && *b > 0 => Ok((*a, *b)),
        _ => Err("expected two positive integers NX,NY".into()),
    }
}

fn parse_window(s: &str) -> std::result::Result<Window, String> {
    let v = parse_floats(s, 4)?;
    Window::new(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())
}

fn params(config: &Option<PathBuf>, sin: Option<f64>, d: Option<f64>) -> Result<ModelParams> {
    let base = match config {
        Some(path) => load_params(path)?,
        None => ModelParams::default(),
    };
    Ok(base.with_operating(sin.unwrap_or(base.s_in()), d.unwrap_or(base.d()))?)
}

fn equilibrium_json(e: &Equilibrium, p: &ModelParams) -> Value {
    let rh = e.rh.unwrap_or_else(|| RouthHurwitz::from_matrix(&mutualism::equilibria::equilibrium_jacobian(e, p)));
    json!({
        "state": {"S": e.state.s, "x1": e.state.x1, "x2": e.state.x2},
        "kind": e.kind,
        "c1": rh.c1, "c2": rh.c2, "c3": rh.c3, "c4": rh.c4,
        "eigenvalues": e.eigenvalues.iter().map(|z| json!({"re": z.re, "im": z.im})).collect::<Vec<_>>(),
        "stability": e.stability,
        "critical": e.critical,
    })
}

fn cmd_equilibria(config: &Option<PathBuf>, sin: Option<f64>, d: Option<f64>, out: &Option<PathBuf>) -> Result<()> {
    let p = params(config, sin, d)?;
    let eqs = all_equilibria(&p)?;
    let doc = json!({
        "S_in": p.s_in(),
        "D": p.d(),
        "equilibria": eqs.iter().map(|e| equilibrium_json(e, &p)).collect::<Vec<_>>(),
    });
    match out {
        Some(path) => write_json(path, doc),
        None => {
            println!("{}", serde_json::to_string_pretty(&output::round_json(doc))?);
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    config: &Option<PathBuf>,
    sin: Option<f64>,
    d: Option<f64>,
    x0: [f64; 3],
    tend: f64,
    dt: Option<f64>,
    tol: f64,
    out: &Path,
) -> Result<()> {
    let p = params(config, sin, d)?;
    let tr = dynamics::integrate_sampled(&State::new(x0[0], x0[1], x0[2]), &p, tend, tol, dt)?;
    let mut w = csv_writer(out)?;
    w.write_record(["t", "S", "x1", "x2"])?;
    for (t, s) in tr.times.iter().zip(&tr.states) {
        w.write_record([fmt(*t), fmt(s.s), fmt(s.x1), fmt(s.x2)])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_basin(
    config: &Option<PathBuf>,
    sin: Option<f64>,
    d: Option<f64>,
    grid: (usize, usize),
    budget: f64,
    out: &Path,
) -> Result<()> {
    let p = params(config, sin, d)?;
    let mut spec = GridSpec::default_for(&p);
    spec.n1 = grid.0;
    spec.n2 = grid.1;
    let map = dynamics::basin_map(&spec, &p, &ClassifyOptions::with_budget(budget))?;
    let mut w = csv_writer(out)?;
    w.write_record(["S", "x1", "x2", "label", "period", "transient"])?;
    for c in &map.cells {
        w.write_record([
            fmt(c.initial.s),
            fmt(c.initial.x1),
            fmt(c.initial.x2),
            c.label.tag(),
            c.label.period().map_or_else(String::new, fmt),
            fmt(c.label.transient),
        ])?;
    }
    w.flush()?;
    let distinct = map.distinct(0.05);
    eprintln!(
        "{} cells, {} attractors: {}",
        map.cells.len(),
        distinct.len(),
        distinct.iter().map(|l| l.tag()).collect::<Vec<_>>().join(", ")
    );
    Ok(())
}

/// Branch through the coexistence equilibrium with the largest biomass at
/// the end of the range (or the start when none exists there).
fn equilibrium_branch(p: &ModelParams, free: OperatingParam, range: (f64, f64)) -> Result<Branch> {
    for end in [range.1, range.0] {
        let q = match free {
            OperatingParam::SIn => p.with_operating(end, p.d())?,
            OperatingParam::D => p.with_operating(p.s_in(), end)?,
        };
        if let Some(e) = find_coexistence(&q)?.first() {
            return Ok(branch::continue_equilibria(&e.state, &q, free, range, &branch::equilibrium_policy())?);
        }
    }
    bail!("no coexistence equilibrium at either end of [{}, {}]", range.0, range.1)
}

fn ordered(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_branch(
    config: &Option<PathBuf>,
    free: Free,
    from: f64,
    to: f64,
    d: Option<f64>,
    sin: Option<f64>,
    out: &Path,
    svg: &Option<PathBuf>,
) -> Result<()> {
    let p = params(config, sin, d)?;
    let free: OperatingParam = free.into();
    let b = equilibrium_branch(&p, free, ordered(from, to))?;
    let mut w = csv_writer(out)?;
    w.write_record(["arclength", "param", "S", "x1", "x2", "c1", "c2", "c3", "c4", "mu", "nu"])?;
    for pt in &b.points {
        w.write_record(
            [
                pt.arclength,
                pt.param,
                pt.state.s,
                pt.state.x1,
                pt.state.x2,
                pt.rh.c1,
                pt.rh.c2,
                pt.rh.c3,
                pt.rh.c4,
                pt.mu,
                pt.nu,
            ]
            .map(fmt),
        )?;
    }
    w.flush()?;
    write_json(
        &sibling_events(out),
        json!({"free": free.name(), "fixed": b.fixed, "events": b.events}),
    )?;
    if let Some(path) = svg {
        fs::write(path, plot::one_parameter_svg(&b, &[]))?;
    }
    Ok(())
}

fn seed_cycle(path: &Path, event: Option<usize>, p: &ModelParams) -> Result<LimitCycle> {
    let v = read_json(path)?;
    if let Some(k) = event {
        let ev: branch::BifurcationEvent = serde_json::from_value(
            v["events"].get(k).cloned().ok_or_else(|| anyhow!("{} has no event {k}", path.display()))?,
        )?;
        let (Some(nodes), Some(period)) = (ev.cycle, ev.period) else {
            bail!("event {k} ({}) stores no cycle", ev.kind.label());
        };
        return Ok(LimitCycle::guess(ev.free, ev.param, ev.fixed, period, nodes, p)?);
    }
    let v = v.get("last_cycle").cloned().unwrap_or(v);
    serde_json::from_value(v).with_context(|| format!("{} does not hold a cycle", path.display()))
}

#[allow(clippy::too_many_arguments)]
fn cmd_cycles(
    config: &Option<PathBuf>,
    d: Option<f64>,
    from_hopf: bool,
    seed: &Option<PathBuf>,
    seed_event: Option<usize>,
    range: (f64, f64),
    out: &Path,
    svg: &Option<PathBuf>,
) -> Result<()> {
    let p = params(config, None, d)?;
    let range = ordered(range.0, range.1);
    let (start, opts) = match (from_hopf, seed) {
        (true, _) => {
            let b = equilibrium_branch(&p, OperatingParam::SIn, range)?;
            let h = b
                .events_of(branch::EventKind::Hopf)
                .next()
                .ok_or_else(|| anyhow!("no Hopf point in [{}, {}] at D = {}", range.0, range.1, p.d()))?;
            (cycles::cycle_from_hopf(h, &p, cycles::DEFAULT_SEED_RADIUS)?, FamilyOptions::default())
        }
        (false, Some(path)) => {
            let guess = seed_cycle(path, seed_event, &p)?;
            let c = cycles::refine_cycle(&guess, &p)?;
            let opts = FamilyOptions { direction: cycles::Direction::Param(1.0), ..FamilyOptions::default() };
            (c, opts)
        }
        (false, None) => bail!("one of --from-hopf or --seed is required"),
    };
    let fam = cycles::continue_cycles(&start, &p, range, &opts)?;
    write_family(&fam, out)?;
    if let Some(path) = svg {
        fs::write(path, plot::period_svg(&cycles::period_curve(std::slice::from_ref(&fam))))?;
    }
    Ok(())
}

fn write_family(fam: &CycleFamily, out: &Path) -> Result<()> {
    let mut w = csv_writer(out)?;
    w.write_record(["param", "T", "S0", "x1_0", "x2_0", "abs_multiplier_1", "abs_multiplier_2", "stability"])?;
    for c in &fam.cycles {
        let [m1, m2] = c.nontrivial();
        let n = c.nodes[0];
        w.write_record([
            fmt(c.param),
            fmt(c.period),
            fmt(n.s),
            fmt(n.x1),
            fmt(n.x2),
            fmt(m1.norm()),
            fmt(m2.norm()),
            c.stability.letter().to_string(),
        ])?;
    }
    w.flush()?;
    write_json(
        &sibling_events(out),
        json!({
            "free": fam.free.name(),
            "fixed": fam.fixed,
            "stop": fam.stop,
            "events": fam.events,
            "last_cycle": fam.cycles.last(),
        }),
    )
}

const REGION_HEADER: [&str; 7] = ["S_in", "D", "label", "E1", "E2", "cycles", "flagged"];

fn write_regions(grid: &RegionGrid, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(REGION_HEADER)?;
    let letter = |c: Option<char>| c.map_or_else(String::new, |c| c.to_string());
    for c in &grid.cells {
        w.write_record([
            fmt(c.s_in),
            fmt(c.d),
            c.label.clone(),
            letter(c.e1),
            letter(c.e2),
            c.cycles.clone(),
            c.flagged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn read_regions(path: &Path, window: Window, nx: usize, ny: usize) -> Result<RegionGrid> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cells = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("").to_string();
        cells.push(RegionCell {
            s_in: get(0).parse()?,
            d: get(1).parse()?,
            label: get(2),
            e1: get(3).chars().next(),
            e2: get(4).chars().next(),
            cycles: get(5),
            flagged: get(6) == "true",
        });
    }
    if cells.len() != nx * ny {
        bail!("{} holds {} cells, expected {nx} x {ny}", path.display(), cells.len());
    }
    Ok(RegionGrid { window, nx, ny, cells })
}

fn cmd_diagram(config: &Option<PathBuf>, window: Window, grid: (usize, usize), slices: usize, out_dir: &Path) -> Result<ExitCode> {
    let p = params(config, None, None)?;
    fs::create_dir_all(out_dir)?;
    let opts = DiagramOptions {
        window,
        nx: grid.0,
        ny: grid.1,
        sweep: SweepOptions { slices, ..SweepOptions::default() },
    };
    let dia = atlas::build_diagram(&p, &opts)?;
    write_json(
        &out_dir.join("curves.json"),
        json!({
            "window": dia.window,
            "grid": {"nx": grid.0, "ny": grid.1},
            "curves": dia.curves,
            "slices": dia.sweep.slices,
            "unresolved_slices": dia.sweep.unresolved_pairs(UNRESOLVED_TOL),
        }),
    )?;
    write_json(&out_dir.join("codim2.json"), json!(dia.codim2))?;
    write_regions(&dia.regions, &out_dir.join("regions.csv"))?;
    fs::write(
        out_dir.join("diagram.svg"),
        plot::operating_diagram_svg(&dia.window, &dia.curves, &dia.codim2, Some(&dia.regions)),
    )?;
    let flagged = dia.regions.flagged();
    eprintln!(
        "{} curves, {} codim-2 points, {} of {} cells flagged",
        dia.curves.len(),
        dia.codim2.len(),
        flagged,
        dia.regions.cells.len()
    );
    Ok(if flagged > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

/// Event pairs closer than twice this in `S_in` are reported as unordered.
const UNRESOLVED_TOL: f64 = 1e-9;

fn cmd_report(in_dir: &Path, out: &Option<PathBuf>) -> Result<()> {
    let curves_doc = read_json(&in_dir.join("curves.json"))?;
    let window: Window = serde_json::from_value(curves_doc["window"].clone())?;
    let curves: Vec<atlas::BifCurve> = serde_json::from_value(curves_doc["curves"].clone())?;
    let codim2: Vec<atlas::Codim2Point> = serde_json::from_value(read_json(&in_dir.join("codim2.json"))?)?;
    let regions_path = in_dir.join("regions.csv");
    let grid = if regions_path.exists() {
        let nx = curves_doc["grid"]["nx"].as_u64().ok_or_else(|| anyhow!("curves.json lacks grid.nx"))? as usize;
        let ny = curves_doc["grid"]["ny"].as_u64().ok_or_else(|| anyhow!("curves.json lacks grid.ny"))? as usize;
        Some(read_regions(&regions_path, window, nx, ny)?)
    } else {
        None
    };
    let target = out.clone().unwrap_or_else(|| in_dir.join("diagram.svg"));
    fs::write(&target, plot::operating_diagram_svg(&window, &curves, &codim2, grid.as_ref()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Equilibria { config, sin, d, out } => cmd_equilibria(config, *sin, *d, out)?,
        Command::Simulate { config, sin, d, x0, tend, dt, tol, out } => {
            cmd_simulate(config, *sin, *d, *x0, *tend, *dt, *tol, out)?
        }
        Command::Basin { config, sin, d, grid, budget, out } => cmd_basin(config, *sin, *d, *grid, *budget, out)?,
        Command::Branch { config, free, from, to, d, sin, out, svg } => {
            cmd_branch(config, *free, *from, *to, *d, *sin, out, svg)?
        }
        Command::Cycles { config, d, from_hopf, seed, seed_event, range, out, svg } => {
            cmd_cycles(config, *d, *from_hopf, seed, *seed_event, *range, out, svg)?
        }
        Command::Diagram { config, window, grid, slices, out_dir } => {
            return cmd_diagram(config, *window, *grid, *slices, out_dir)
        }
        Command::Report { in_dir, out } => cmd_report(in_dir, out)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors count as failures; 2 is reserved for partial results
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
