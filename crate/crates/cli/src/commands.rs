use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use hdp_core::export::{
    fmt_f64, keep_slice, write_costate, write_extremum, write_gains, write_policy, write_riccati_path,
    write_trajectory, write_value_function, ExportError,
};
use hdp_core::expr::Expr;
use hdp_core::hjb::{dpp_residual, solve, synthesize_trajectory, Grid, Policy, ValueFunction, Variant};
use hdp_core::mesh::Side;
use hdp_core::model::{CostSpec, HybridSystem};
use hdp_core::pmp::{check_extremum, costate_vs_grad_v, integrate_costate, PmpModel};
use hdp_core::riccati::{simulate_closed_loop, solve_impulsive_riccati, LqSystem, RiccatiSolution};
use hdp_core::scenario::{Scenario, ScenarioError};
use hdp_core::sim::{evaluate_cost, integrate, Trajectory, EVENT_TOL};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::args::{
    CheckExprArgs, Cli, Command, CompareArgs, ControlsArg, RiccatiArgs, SimulateArgs, SolveArgs, SolverArgs, StartArgs,
    SynthesizeArgs, VerifyArgs,
};
use crate::error::CliError;
use crate::summary::Run;

const DEFAULT_RICCATI_DT: f64 = 1e-3;

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => simulate(&cli.out, a),
        Command::Solve(a) => solve_cmd(&cli.out, a),
        Command::Synthesize(a) => synthesize(&cli.out, a),
        Command::VerifyPmp(a) => verify_pmp(&cli.out, a),
        Command::Riccati(a) => riccati(&cli.out, a),
        Command::CompareLq(a) => compare_lq(&cli.out, a),
        Command::CheckExpr(a) => check_expr(a),
    }
}

struct Loaded {
    path: PathBuf,
    bytes: Vec<u8>,
    sc: Scenario,
}

fn load(path: &Path) -> Result<Loaded, CliError> {
    let bytes = std::fs::read(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| CliError::Config(format!("{}: not valid UTF-8: {e}", path.display())))?;
    let sc = Scenario::from_json(text)?;
    Ok(Loaded {
        path: path.to_path_buf(),
        bytes,
        sc,
    })
}

impl Loaded {
    fn run(&self, out: &Path, command: &'static str, config: &impl serde::Serialize) -> Result<Run, CliError> {
        Run::start(out, command, &self.path, &self.bytes, config)
    }

    fn lq(&self) -> Result<&LqSystem, CliError> {
        self.sc
            .lq
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("{}: this command needs an `lq` scenario", self.path.display())))
    }
}

/// Start time and full start state, or `None` when neither the scenario nor
/// the flags give one.
fn start_point(sc: &Scenario, a: &StartArgs) -> Result<Option<(f64, Vec<f64>)>, CliError> {
    let sim = sc.simulation();
    let Some(x0) = a.x0.clone().or_else(|| sim.map(|s| s.x0.clone())) else {
        return Ok(None);
    };
    let expected = sc.reduction.as_ref().map_or(sc.system.n, |r| r.layout.y.len());
    if x0.len() != expected {
        return Err(CliError::Config(format!("start state has {} entries, expected {expected}", x0.len())));
    }
    let s = a.s.or(sim.map(|s| s.s)).unwrap_or(0.0);
    if !(0.0..sc.system.horizon).contains(&s) {
        return Err(CliError::Config(format!("start time {s} outside [0, {})", sc.system.horizon)));
    }
    Ok(Some((s, sc.initial_state(&x0))))
}

fn require_start(sc: &Scenario, a: &StartArgs) -> Result<(f64, Vec<f64>), CliError> {
    start_point(sc, a)?.ok_or_else(|| CliError::Config("no start state: give --x0 or a `simulation` block".into()))
}

/// The scenario grid with command-line overrides, if enough is given.
fn resolve_grid(sc: &Scenario, a: &SolverArgs) -> Result<Option<Grid>, CliError> {
    let base = sc.grid();
    let pick = |o: &Option<Vec<f64>>, b: Option<&Vec<f64>>| o.clone().or_else(|| b.cloned());
    let lo = pick(&a.lo, base.map(|g| &g.lo));
    let hi = pick(&a.hi, base.map(|g| &g.hi));
    let nodes = a.nodes.clone().or_else(|| base.map(|g| g.nodes.clone()));
    let dt = a.grid_dt.or(base.map(|g| g.dt));
    let (Some(lo), Some(hi), Some(nodes), Some(dt)) = (lo, hi, nodes, dt) else {
        if base.is_none() && (a.lo.is_some() || a.hi.is_some() || a.nodes.is_some() || a.grid_dt.is_some()) {
            return Err(CliError::Config("incomplete grid: give all of --lo, --hi, --nodes and --grid-dt".into()));
        }
        return Ok(None);
    };
    let grid = Grid { lo, hi, nodes, dt };
    grid.validate().map_err(|e| CliError::Config(format!("grid: {e}")))?;
    if grid.dim() != sc.system.n {
        return Err(CliError::Config(format!(
            "grid has {} axes but the state has {}",
            grid.dim(),
            sc.system.n
        )));
    }
    Ok(Some(grid))
}

fn require_grid(sc: &Scenario, a: &SolverArgs) -> Result<Grid, CliError> {
    resolve_grid(sc, a)?.ok_or_else(|| {
        CliError::Config("no grid: add a `grid` block or give --lo, --hi, --nodes and --grid-dt".into())
    })
}

/// The scenario system with the requested control lattice densities.
fn solver_system(sc: &Scenario, a: &SolverArgs) -> HybridSystem {
    let mut sys = sc.system.clone();
    if let Some(n) = a.u_samples {
        sys.u_set = sys.u_set.with_samples(n);
    }
    if let Some(n) = a.w_samples {
        sys.w_set = sys.w_set.with_samples(n);
    }
    sys
}

fn grid_solve(
    sys: &HybridSystem,
    costs: &CostSpec,
    grid: &Grid,
    variant: Variant,
) -> Result<(ValueFunction, Policy), CliError> {
    let t = Instant::now();
    let out = solve(sys, costs, grid, variant)?;
    log::info!("{variant:?} solve on {} nodes took {:.2}s", grid.len(), t.elapsed().as_secs_f64());
    Ok(out)
}

fn solver_config(a: &SolverArgs, grid: &Grid, sys: &HybridSystem) -> serde_json::Value {
    json!({
        "variant": a.variant,
        "grid": grid,
        "u_set": sys.u_set,
        "w_set": sys.w_set,
        "export_stride": a.export_stride,
    })
}

fn write_solution(run: &mut Run, vf: &ValueFunction, pol: &Policy, stride: usize) -> Result<(), CliError> {
    run.csv("value.csv", |w| write_value_function(w, vf, stride))?;
    run.csv("policy.csv", |w| write_policy(w, pol, stride))
}

fn simulate(out: &Path, a: &SimulateArgs) -> Result<(), CliError> {
    let l = load(&a.scenario)?;
    let sc = &l.sc;
    let (s, xi) = require_start(sc, &a.start)?;
    let dt = a
        .dt
        .or(sc.simulation().map(|s| s.dt))
        .ok_or_else(|| CliError::Config("no step: give --dt or a `simulation` block".into()))?;
    let mut run = l.run(out, "simulate", &json!({"s": s, "x0": xi, "dt": dt}))?;
    let tr = integrate(&sc.system, &sc.u_signal(), &sc.w_signal(), s, &xi, dt)?;
    let cost = evaluate_cost(&tr, &sc.costs)?;
    run.csv("trajectory.csv", |w| write_trajectory(w, &tr, &sc.system))?;
    run.tolerance("event_time", EVENT_TOL);
    run.metric("cost", cost);
    run.metric("rows", tr.len());
    run.metric("jumps", tr.jumps.len());
    run.metric("jump_times", tr.jumps.iter().map(|j| j.t).collect::<Vec<_>>());
    run.metric("jump_reconstruction_error", tr.reconstruction_error(&sc.system)?);
    run.metric("final_state", tr.final_state());
    finish(run)
}

/// Random step-start points `(s, ξ)` inside the central 80% of the grid.
fn residual_points(vf: &ValueFunction, count: usize, seed: u64) -> Vec<(f64, Vec<f64>)> {
    let starts: Vec<f64> = vf
        .slices
        .iter()
        .enumerate()
        .filter(|(i, sl)| sl.side != Side::Minus && i + 1 < vf.slices.len())
        .map(|(_, sl)| sl.s)
        .collect();
    if starts.is_empty() {
        return Vec::new();
    }
    let g = &vf.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let s = starts[rng.gen_range(0..starts.len())];
            let x = (0..g.dim())
                .map(|d| g.lo[d] + (g.hi[d] - g.lo[d]) * rng.gen_range(0.1..0.9))
                .collect();
            (s, x)
        })
        .collect()
}

fn solve_cmd(out: &Path, a: &SolveArgs) -> Result<(), CliError> {
    let l = load(&a.scenario)?;
    let sc = &l.sc;
    let grid = require_grid(sc, &a.solver)?;
    let sys = solver_system(sc, &a.solver);
    let start = start_point(sc, &a.start)?;
    let mut config = solver_config(&a.solver, &grid, &sys);
    config["seed"] = json!(a.seed);
    config["residual_samples"] = json!(a.residual_samples);
    let mut run = l.run(out, "solve", &config)?;
    let (vf, pol) = grid_solve(&sys, &sc.costs, &grid, a.solver.variant.into())?;
    write_solution(&mut run, &vf, &pol, a.solver.export_stride)?;
    let all = vf.slices.iter().flat_map(|s| s.layers.iter().flatten());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    run.metric("slices", vf.slices.len());
    run.metric("impulse_times", &vf.impulse_times);
    run.metric("clamp_fraction", vf.clamp_fraction());
    run.metric("value_min", lo);
    run.metric("value_max", hi);
    if let Some((s, xi)) = start {
        run.metric("start", json!({"s": s, "x": xi, "value": vf.value(s, Side::Plus, &xi)?}));
    }
    let points = residual_points(&vf, a.residual_samples, a.seed);
    run.metric("dpp_residual", dpp_residual(&vf, &sys, &sc.costs, &points)?);
    finish(run)
}

fn synthesize(out: &Path, a: &SynthesizeArgs) -> Result<(), CliError> {
    let l = load(&a.scenario)?;
    let sc = &l.sc;
    let grid = require_grid(sc, &a.solver)?;
    let sys = solver_system(sc, &a.solver);
    let (s, xi) = require_start(sc, &a.start)?;
    let mut config = solver_config(&a.solver, &grid, &sys);
    config["s"] = json!(s);
    config["x0"] = json!(xi);
    let mut run = l.run(out, "synthesize", &config)?;
    let (vf, pol) = grid_solve(&sys, &sc.costs, &grid, a.solver.variant.into())?;
    let syn = synthesize_trajectory(&vf, &pol, &sys, &sc.costs, s, &xi)?;
    write_solution(&mut run, &vf, &pol, a.solver.export_stride)?;
    run.csv("trajectory.csv", |w| write_trajectory(w, &syn.trajectory, &sys))?;
    let gap = syn.cost.total - syn.value;
    run.metric("cost", syn.cost);
    run.metric("value", syn.value);
    run.metric("gap", gap);
    run.metric("relative_gap", gap.abs() / syn.value.abs().max(1.0));
    run.metric("jumps", syn.trajectory.jumps.len());
    run.metric("final_state", syn.trajectory.final_state());
    finish(run)
}

/// Largest `‖p − 2Kx‖∞ / ‖2Kx‖∞` along the trajectory.
fn analytic_costate_error(sol: &RiccatiSolution, tr: &Trajectory, costates: &[Vec<f64>]) -> Result<f64, CliError> {
    let mut worst: f64 = 0.0;
    for i in 0..tr.len() {
        let k = sol.k_at(tr.times[i], tr.sides[i])?;
        let x = DMatrix::from_column_slice(tr.n, 1, &tr.states[i]);
        let exact = k * x * 2.0;
        let diff = exact.iter().zip(&costates[i]).map(|(e, p)| (e - p).abs()).fold(0.0, f64::max);
        let scale = exact.amax();
        worst = worst.max(if scale > 0.0 { diff / scale } else { diff });
    }
    Ok(worst)
}

fn verify_pmp(out: &Path, a: &VerifyArgs) -> Result<(), CliError> {
    let l = load(&a.scenario)?;
    let sc = &l.sc;
    let sys = solver_system(sc, &a.solver);
    let (s, xi) = require_start(sc, &a.start)?;
    let grid = match a.controls {
        ControlsArg::Grid => Some(require_grid(sc, &a.solver)?),
        ControlsArg::Riccati => resolve_grid(sc, &a.solver)?,
    };
    let riccati_dt = a.dt.or(grid.as_ref().map(|g| g.dt)).unwrap_or(DEFAULT_RICCATI_DT);
    let config = json!({
        "controls": a.controls,
        "variant": a.solver.variant,
        "grid": grid,
        "u_set": sys.u_set,
        "w_set": sys.w_set,
        "riccati_dt": riccati_dt,
        "s": s,
        "x0": xi,
    });
    let mut run = l.run(out, "verify-pmp", &config)?;
    run.tolerance("extremum", a.tol);
    let solved = match &grid {
        Some(g) => Some(grid_solve(&sys, &sc.costs, g, a.solver.variant.into())?),
        None => None,
    };
    let (tr, riccati) = match a.controls {
        ControlsArg::Grid => {
            let (vf, pol) = solved.as_ref().expect("grid controls need a grid");
            (synthesize_trajectory(vf, pol, &sys, &sc.costs, s, &xi)?.trajectory, None)
        }
        ControlsArg::Riccati => {
            let lq = l.lq()?;
            let sol = solve_impulsive_riccati(lq, riccati_dt)?;
            (simulate_closed_loop(lq, &sol, &sys, s, &xi, riccati_dt)?, Some(sol))
        }
    };
    let model = PmpModel::new(&sys, &sc.costs);
    let cp = integrate_costate(&model, &tr)?;
    let report = check_extremum(&model, &tr, &cp, &sys.u_set.enumerate(), &sys.w_set.enumerate(), a.tol)?;
    run.csv("trajectory.csv", |w| write_trajectory(w, &tr, &sys))?;
    run.csv("costate.csv", |w| write_costate(w, &cp))?;
    run.csv("extremum.csv", |w| write_extremum(w, &report))?;
    run.metric("cost", evaluate_cost(&tr, &sc.costs)?);
    run.metric("margins", report.margins.len());
    run.metric("violations", report.violations);
    run.metric("min_margin", report.min_margin);
    run.metric("kink_hits", cp.kink_hits);
    if let Some((vf, _)) = &solved {
        let grad = match costate_vs_grad_v(&cp, vf, &tr) {
            Ok(g) => json!(g),
            Err(e) => json!({"error": e.to_string()}),
        };
        run.metric("costate_vs_grad_v", grad);
    }
    if let Some(sol) = &riccati {
        run.metric("costate_vs_riccati_max_rel", analytic_costate_error(sol, &tr, &cp.costates)?);
    }
    finish(run)
}

fn riccati(out: &Path, a: &RiccatiArgs) -> Result<(), CliError> {
    let l = load(&a.scenario)?;
    let sc = &l.sc;
    let lq = l.lq()?;
    let dt = a.dt.or(sc.grid().map(|g| g.dt)).unwrap_or(DEFAULT_RICCATI_DT);
    let start = start_point(sc, &a.start)?;
    let mut run = l.run(out, "riccati", &json!({"dt": dt, "cross_term": lq.cross_term, "start": start}))?;
    let sol = solve_impulsive_riccati(lq, dt)?;
    run.csv("riccati.csv", |w| write_riccati_path(w, &sol))?;
    run.csv("gains.csv", |w| write_gains(w, &sol))?;
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
    run.metric("k_start", rows(&sol.k_at(0.0, Side::Plus)?));
    run.metric("min_eigenvalue", sol.min_eigenvalue());
    run.metric("max_asymmetry", sol.max_asymmetry());
    run.metric(
        "gains",
        sol.gains.iter().map(|g| json!({"tau": g.tau, "L": rows(&g.gain)})).collect::<Vec<_>>(),
    );
    if let Some((s, xi)) = start {
        let tr = simulate_closed_loop(lq, &sol, &sc.system, s, &xi, dt)?;
        let cost = evaluate_cost(&tr, &sc.costs)?;
        let value = sol.lq_value(s, Side::Plus, &xi)?;
        run.csv("trajectory.csv", |w| write_trajectory(w, &tr, &sc.system))?;
        run.metric("closed_loop_cost", cost);
        run.metric("value", value);
        run.metric("relative_gap", (cost.total - value).abs() / value.abs().max(f64::MIN_POSITIVE));
    }
    finish(run)
}

struct Comparison {
    max_rel: f64,
    mean_rel: f64,
    count: usize,
    worst_s: f64,
    worst_x: Vec<f64>,
}

fn interior_mask(grid: &Grid, fraction: f64) -> Vec<bool> {
    let mut x = Vec::new();
    (0..grid.len())
        .map(|i| {
            grid.node_into(i, &mut x);
            (0..grid.dim()).all(|d| {
                let mid = 0.5 * (grid.lo[d] + grid.hi[d]);
                let half = 0.5 * fraction * (grid.hi[d] - grid.lo[d]);
                (x[d] - mid).abs() <= half * (1.0 + 1e-12)
            })
        })
        .collect()
}

fn write_comparison(
    w: &mut BufWriter<File>,
    vf: &ValueFunction,
    sol: &RiccatiSolution,
    inside: &[bool],
    stride: usize,
) -> Result<(), ExportError> {
    let g = &vf.grid;
    let mut header = vec!["s".to_string(), "side".to_string()];
    header.extend((1..=g.dim()).map(|i| format!("x{i}")));
    header.extend(["V_grid", "V_lq", "rel"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    let mut x = Vec::new();
    for (i, sl) in vf.slices.iter().enumerate() {
        if !keep_slice(i, vf.slices.len(), sl.side, stride) {
            continue;
        }
        for (k, &v) in sl.layers[vf.reported_layer].iter().enumerate() {
            if !inside[k] {
                continue;
            }
            g.node_into(k, &mut x);
            let exact = sol.lq_value(sl.s, sl.side, &x).map_err(std::io::Error::other)?;
            let mut fields = vec![fmt_f64(sl.s), sl.side.symbol().to_string()];
            fields.extend(x.iter().map(|&v| fmt_f64(v)));
            fields.extend([v, exact, (v - exact).abs() / (1.0 + exact.abs())].map(fmt_f64));
            writeln!(w, "{}", fields.join(","))?;
        }
    }
    Ok(())
}

fn compare(vf: &ValueFunction, sol: &RiccatiSolution, inside: &[bool]) -> Result<Comparison, CliError> {
    let g = &vf.grid;
    let mut c = Comparison {
        max_rel: 0.0,
        mean_rel: 0.0,
        count: 0,
        worst_s: 0.0,
        worst_x: Vec::new(),
    };
    let mut x = Vec::new();
    let mut sum = 0.0;
    for sl in &vf.slices {
        let k = sol.k_at(sl.s, sl.side)?;
        for (i, &v) in sl.layers[vf.reported_layer].iter().enumerate() {
            if !inside[i] {
                continue;
            }
            g.node_into(i, &mut x);
            let xv = DMatrix::from_column_slice(x.len(), 1, &x);
            let exact = (xv.transpose() * &k * &xv)[(0, 0)];
            let rel = (v - exact).abs() / (1.0 + exact.abs());
            sum += rel;
            c.count += 1;
            if rel > c.max_rel {
                c.max_rel = rel;
                c.worst_s = sl.s;
                c.worst_x = x.clone();
            }
        }
    }
    c.mean_rel = if c.count == 0 { 0.0 } else { sum / c.count as f64 };
    Ok(c)
}

fn compare_lq(out: &Path, a: &CompareArgs) -> Result<(), CliError> {
    let l = load(&a.scenario)?;
    let sc = &l.sc;
    let lq = l.lq()?;
    if !(a.interior > 0.0 && a.interior <= 1.0) {
        return Err(CliError::Config("--interior must lie in (0, 1]".into()));
    }
    let grid = require_grid(sc, &a.solver)?;
    let sys = solver_system(sc, &a.solver);
    let mut config = solver_config(&a.solver, &grid, &sys);
    config["interior"] = json!(a.interior);
    config["riccati_dt"] = json!(grid.dt);
    let mut run = l.run(out, "compare-lq", &config)?;
    run.tolerance("max_relative_error", a.tol);
    let (vf, _) = grid_solve(&sys, &sc.costs, &grid, a.solver.variant.into())?;
    let sol = solve_impulsive_riccati(lq, grid.dt)?;
    let inside = interior_mask(&grid, a.interior);
    let c = compare(&vf, &sol, &inside)?;
    run.csv("compare.csv", |w| write_comparison(w, &vf, &sol, &inside, a.solver.export_stride))?;
    let passed = c.max_rel <= a.tol;
    run.metric("max_relative_error", c.max_rel);
    run.metric("mean_relative_error", c.mean_rel);
    run.metric("compared_values", c.count);
    run.metric("worst_point", json!({"s": c.worst_s, "x": c.worst_x}));
    run.metric("passed", passed);
    finish(run)?;
    println!("max relative error {:.6e} (limit {:e})", c.max_rel, a.tol);
    if passed {
        Ok(())
    } else {
        Err(CliError::Threshold(format!(
            "max relative error {:e} exceeds {:e} at s = {}, x = {:?}",
            c.max_rel, a.tol, c.worst_s, c.worst_x
        )))
    }
}

fn check_expr(a: &CheckExprArgs) -> Result<(), CliError> {
    let e = Expr::parse(&a.expr, &a.vars)?;
    let derivatives: Vec<Expr> = a.vars.iter().map(|v| e.derivative(v)).collect();
    let mut doc = json!({
        "expression": e.to_string(),
        "variables": a.vars,
        "derivatives": a.vars.iter().zip(&derivatives)
            .map(|(v, d)| json!({"variable": v, "derivative": d.to_string()}))
            .collect::<Vec<_>>(),
    });
    if let Some(at) = &a.at {
        if at.len() != a.vars.len() {
            return Err(CliError::Config(format!(
                "--at has {} values for {} variables",
                at.len(),
                a.vars.len()
            )));
        }
        let eval = |e: &Expr| e.eval(at).map_err(|err| CliError::Numerical(err.to_string()));
        doc["value"] = json!(eval(&e)?);
        doc["gradient"] = json!(derivatives.iter().map(eval).collect::<Result<Vec<_>, _>>()?);
    }
    println!("{}", serde_json::to_string_pretty(&doc).map_err(|e| CliError::Config(e.to_string()))?);
    Ok(())
}

fn finish(run: Run) -> Result<(), CliError> {
    let path = run.finish()?;
    log::info!("wrote {}", path.display());
    Ok(())
}
