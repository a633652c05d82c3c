//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain
//! binary (`harness = false`) so the lines are always visible.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use hdp_core::expr::{Expr, ParseError};
use hdp_core::hjb::{solve_aftereffect, solve_basic, Grid, Policy, ValueFunction};
use hdp_core::mesh::Side;
use hdp_core::model::{lq_to_general, validate_system, CostSpec, CostsSpec, HybridSystem, SystemSpec};
use hdp_core::pmp::{check_extremum, costate_vs_grad_v, integrate_costate, PmpModel};
use hdp_core::riccati::{
    impulse_gain, riccati_jump, simulate_closed_loop, solve_impulsive_riccati, validate_lq, LqSpec, LqSystem,
};
use hdp_core::sim::{evaluate_cost, integrate, ControlSignal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Instance shared by criteria 1, 4 and 7.
struct ScalarCase {
    lq: LqSystem,
    sys: HybridSystem,
    costs: CostSpec,
    vf: ValueFunction,
    _policy: Policy,
    solve_seconds: f64,
}

fn scalar_lq() -> LqSystem {
    let spec: LqSpec = serde_json::from_value(json!({
        "n": 1, "mu": 1, "mw": 1,
        "P": [[0]], "Q": [[1]], "A": [[1]], "B": [[0]], "C": [[1]], "A0": [[1]],
        "impulses": [{"tau": 0.5, "M": [[0]], "N": [[1]], "alpha": [[0]], "beta": [[0]], "gamma": [[1]]}],
        "controls": {
            "u": {"box": {"lo": [-4.0], "hi": [4.0], "samples": [81]}},
            "w": {"box": {"lo": [-4.0], "hi": [4.0], "samples": [801]}}
        }
    }))
    .unwrap();
    validate_lq(&spec, 1.0).unwrap()
}

fn scalar_case() -> &'static ScalarCase {
    static CASE: OnceLock<ScalarCase> = OnceLock::new();
    CASE.get_or_init(|| {
        let lq = scalar_lq();
        let (sys, costs) = lq_to_general(&lq).unwrap();
        let grid = Grid {
            lo: vec![-2.0],
            hi: vec![2.0],
            nodes: vec![401],
            dt: 1e-3,
        };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let start = Instant::now();
        let (vf, policy) = pool.install(|| solve_basic(&sys, &costs, &grid)).unwrap();
        ScalarCase {
            lq,
            sys,
            costs,
            vf,
            _policy: policy,
            solve_seconds: start.elapsed().as_secs_f64(),
        }
    })
}

/// `K(s)` of the scalar instance: 1 after the impulse, 1/2 at its left
/// limit, `tanh(atanh(1/2) + 1/2 − s)` before it.
fn scalar_k(s: f64, side: Side) -> f64 {
    if side == Side::Minus {
        0.5
    } else if s >= 0.5 - 1e-12 {
        1.0
    } else {
        (0.5f64.atanh() + 0.5 - s).tanh()
    }
}

fn criterion_1() -> Outcome {
    let case = scalar_case();
    let g = &case.vf.grid;
    let mut worst: f64 = 0.0;
    for sl in &case.vf.slices {
        let k = scalar_k(sl.s, sl.side);
        for (i, v) in sl.layers[0].iter().enumerate() {
            let xi = g.node(i)[0];
            if xi.abs() > 1.2 + 1e-12 {
                continue;
            }
            let exact = xi * xi * k;
            worst = worst.max((v - exact).abs() / (1.0 + exact));
        }
    }
    outcome(
        worst <= 0.02 && case.solve_seconds <= 60.0,
        format!(
            "max relative error {worst:.3e} (limit 2e-2) over {} slices, single-threaded solve {:.1}s (limit 60s)",
            case.vf.slices.len(),
            case.solve_seconds
        ),
    )
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..r).map(|_| (0..c).map(|_| rng.gen_range(-scale..scale)).collect()).collect()
}

fn gram(g: &[Vec<f64>], shift: f64) -> Vec<Vec<f64>> {
    let n = g.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = (0..g[i].len()).map(|k| g[i][k] * g[j][k]).sum::<f64>() + if i == j { shift } else { 0.0 };
        }
    }
    out
}

fn dm(rows: &[Vec<f64>]) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

/// Jump objective written out with plain loops.
struct JumpProblem {
    kp: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
    n: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
}

impl JumpProblem {
    fn objective(&self, x: &[f64], b: &[f64]) -> f64 {
        let nx = x.len();
        let y: Vec<f64> = (0..nx)
            .map(|i| {
                x[i] + (0..nx).map(|j| self.m[i][j] * x[j]).sum::<f64>()
                    + (0..b.len()).map(|j| self.n[i][j] * b[j]).sum::<f64>()
            })
            .collect();
        let quad = |a: &[Vec<f64>], u: &[f64], v: &[f64]| -> f64 {
            (0..u.len()).map(|i| (0..v.len()).map(|j| u[i] * a[i][j] * v[j]).sum::<f64>()).sum()
        };
        quad(&self.kp, &y, &y) + quad(&self.alpha, x, x) + 2.0 * quad(&self.beta, x, b) + quad(&self.gamma, b, b)
    }

    /// Lattice minimum with 201 points per axis on `[−r, r]`, re-centred on
    /// the best point with a finer lattice a few times.
    fn brute_min(&self, x: &[f64], r: f64, mw: usize) -> f64 {
        const PTS: usize = 201;
        let mut center = vec![0.0; mw];
        let mut half = r;
        let mut best = f64::INFINITY;
        let mut b = vec![0.0; mw];
        for _ in 0..6 {
            let h = 2.0 * half / (PTS - 1) as f64;
            let mut best_b = center.clone();
            let total = PTS.pow(mw as u32);
            for idx in 0..total {
                let mut rest = idx;
                for (d, bd) in b.iter_mut().enumerate() {
                    *bd = center[d] - half + h * (rest % PTS) as f64;
                    rest /= PTS;
                }
                let v = self.objective(x, &b);
                if v < best {
                    best = v;
                    best_b.copy_from_slice(&b);
                }
            }
            center = best_b;
            half = 2.0 * h;
        }
        best
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for _ in 0..50 {
        let n = rng.gen_range(1..=3);
        let mw = rng.gen_range(1..=2);
        let g = random_matrix(&mut rng, n, n, 1.0);
        let h = random_matrix(&mut rng, n, n, 0.5);
        let jg = random_matrix(&mut rng, mw, mw, 1.0);
        let p = JumpProblem {
            kp: gram(&g, 0.1),
            m: random_matrix(&mut rng, n, n, 0.5),
            n: random_matrix(&mut rng, n, mw, 1.0),
            alpha: (0..n).map(|i| (0..n).map(|j| 0.5 * (h[i][j] + h[j][i])).collect()).collect(),
            beta: random_matrix(&mut rng, n, mw, 0.5),
            gamma: gram(&jg, 0.2),
        };
        let (kp, m, nn, alpha, beta, gamma) = (dm(&p.kp), dm(&p.m), dm(&p.n), dm(&p.alpha), dm(&p.beta), dm(&p.gamma));
        let k_minus = riccati_jump(&kp, &m, &nn, &alpha, &beta, &gamma).unwrap();
        let gain = impulse_gain(&kp, &m, &nn, &beta, &gamma).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xv = nalgebra::DVector::from_column_slice(&x);
            let formula = (xv.transpose() * &k_minus * &xv)[(0, 0)];
            let r = 4.0 * (&gain * &xv).norm() + 1.0;
            let brute = p.brute_min(&x, r, mw);
            worst = worst.max((formula - brute).abs() / (1.0 + formula.abs()));
            checks += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-6 && secs <= 30.0,
        format!("{checks} checks, max scaled difference {worst:.3e} (limit 1e-6), {secs:.1}s (limit 30s)"),
    )
}

fn build(system: serde_json::Value, costs: serde_json::Value, horizon: f64) -> (HybridSystem, CostSpec) {
    let spec: SystemSpec = serde_json::from_value(system).unwrap();
    let costs: CostsSpec = serde_json::from_value(costs).unwrap();
    validate_system(&spec, &costs, horizon).unwrap()
}

fn criterion_3() -> Outcome {
    let system = |times: Vec<f64>| {
        json!({
            "n": 1, "f": ["u1 - 0.5*x1"],
            "impulse": {"times": times, "I": ["0"]},
            "controls": {"u": {"box": {"lo": [-1.0], "hi": [1.0], "samples": [21]}},
                         "w": {"finite": [[-1.0], [0.0], [1.0]]}}
        })
    };
    let costs = json!({"F": "x1^2 + 0.5*u1^2", "Phi": "0", "F0": "abs(x1 - 0.3)"});
    let grid = Grid {
        lo: vec![-2.0],
        hi: vec![2.0],
        nodes: vec![81],
        dt: 0.01,
    };
    let (with, c1) = build(system(vec![0.5]), costs.clone(), 1.0);
    let (without, c2) = build(system(vec![]), costs, 1.0);
    let (vf, _) = solve_basic(&with, &c1, &grid).unwrap();
    let (plain, _) = solve_basic(&without, &c2, &grid).unwrap();
    let minus = vf.slice_index(0.5, Side::Minus).unwrap();
    let plus = vf.slice_index(0.5, Side::Plus).unwrap();
    let jump_identical = minus != plus && vf.slices[minus].layers[0] == vf.slices[plus].layers[0];
    let kept: Vec<_> = vf.slices.iter().filter(|s| s.side != Side::Minus).collect();
    let same_count = kept.len() == plain.slices.len();
    let mismatched = kept
        .iter()
        .zip(&plain.slices)
        .filter(|(a, b)| (a.s - b.s).abs() > 1e-12 || a.layers[0] != b.layers[0])
        .count();
    outcome(
        jump_identical && same_count && mismatched == 0,
        format!(
            "V- and V+ at tau bit-identical: {jump_identical}; {} vs {} slices, {mismatched} differing from the schedule-free solve",
            kept.len(),
            plain.slices.len()
        ),
    )
}

fn criterion_4() -> Outcome {
    let case = scalar_case();
    let sol = solve_impulsive_riccati(&case.lq, 1e-3).unwrap();
    let tr = simulate_closed_loop(&case.lq, &sol, &case.sys, 0.0, &[1.0], 1e-3).unwrap();
    let model = PmpModel::new(&case.sys, &case.costs);
    let cp = integrate_costate(&model, &tr).unwrap();
    let report = check_extremum(
        &model,
        &tr,
        &cp,
        &case.sys.u_set.enumerate(),
        &case.sys.w_set.enumerate(),
        1e-6,
    )
    .unwrap();
    let grad = costate_vs_grad_v(&cp, &case.vf, &tr).unwrap();
    let mut analytic: f64 = 0.0;
    for i in 0..tr.len() {
        let exact = 2.0 * scalar_k(tr.times[i], tr.sides[i]) * tr.states[i][0];
        analytic = analytic.max((cp.costates[i][0] - exact).abs() / exact.abs());
    }
    outcome(
        report.violations == 0 && grad.max_rel <= 0.05 && analytic <= 0.005,
        format!(
            "{} violations of {} margins at tol 1e-6 (min margin {:.2e}); costate vs grid gradient max rel {:.3e} (limit 5e-2); vs 2K(s)x(s) max rel {analytic:.3e} (limit 5e-3)",
            report.violations,
            report.margins.len(),
            report.min_margin,
            grad.max_rel
        ),
    )
}

fn criterion_5() -> Outcome {
    let (sys, _) = build(
        json!({"n": 1, "f": ["x1"], "impulse": {"times": [], "I": ["0"]},
               "controls": {"u": {"finite": [[0.0]]}, "w": {"finite": [[0.0]]}}}),
        json!({"F": "0", "Phi": "0", "F0": "0"}),
        1.0,
    );
    let zero = ControlSignal::Constant(vec![0.0]);
    let err = |h: f64| {
        let tr = integrate(&sys, &zero, &zero, 0.0, &[1.0], h).unwrap();
        (tr.final_state().unwrap()[0] - 1f64.exp()).abs()
    };
    let ratios: Vec<f64> = [1e-2, 5e-3].iter().map(|&h| err(h) / err(h / 2.0)).collect();
    outcome(
        ratios.iter().all(|r| (12.0..=20.0).contains(r)),
        format!("error ratios {:.3} (h=1e-2), {:.3} (h=5e-3), required in [12, 20]", ratios[0], ratios[1]),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let (sys, costs) = build(
        json!({
            "n": 1, "f": ["u1"],
            "impulse": {"times": [0.4, 0.7], "I": ["w1*(0.6 - 0.3*b1)"], "coupling": "aftereffect", "initial_b": [0.0]},
            "controls": {"u": {"finite": [[-1.0], [-0.5], [0.0], [0.5], [1.0]]}, "w": {"finite": [[0.0], [1.0]]}}
        }),
        json!({"F": "0.5*u1^2", "Phi": "0.05*w1 + 0.1*w1*b1", "F0": "(x1 - 1.6)^2"}),
        1.0,
    );
    let grid = Grid {
        lo: vec![-1.0],
        hi: vec![3.0],
        nodes: vec![41],
        dt: 0.01,
    };
    let (vf, _) = solve_aftereffect(&sys, &costs, &grid).unwrap();
    let xi = 0.5;
    let dp = vf.value(0.0, Side::Plus, &[xi]).unwrap();
    // exhaustive: impulse sequences × one constant control per segment
    let us = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let lens = [0.4, 0.3, 0.3];
    let mut oracle = f64::INFINITY;
    for w1 in [0.0, 1.0] {
        for w2 in [0.0, 1.0] {
            for u1 in us {
                for u2 in us {
                    for u3 in us {
                        let mut x = xi;
                        let mut cost = 0.0;
                        let mut b = 0.0;
                        for (k, (u, len)) in [u1, u2, u3].iter().zip(lens).enumerate() {
                            x += u * len;
                            cost += 0.5 * u * u * len;
                            if k < 2 {
                                let w = if k == 0 { w1 } else { w2 };
                                x += w * (0.6 - 0.3 * b);
                                cost += 0.05 * w + 0.1 * w * b;
                                b = w;
                            }
                        }
                        oracle = oracle.min(cost + (x - 1.6) * (x - 1.6));
                    }
                }
            }
        }
    }
    let h = grid.spacing(0);
    let lip = [-h, h]
        .iter()
        .map(|d| ((vf.value(0.0, Side::Plus, &[xi + d]).unwrap() - dp) / h).abs())
        .fold(0.0, f64::max);
    let tol = (0.02 * oracle.abs()).max(lip * h);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (dp - oracle).abs() <= tol && secs <= 120.0,
        format!(
            "DP value {dp:.6} vs enumeration {oracle:.6}, difference {:.3e} (tolerance {tol:.3e} = max(2% rel, {lip:.3}*{h})), {secs:.1}s (limit 120s)",
            (dp - oracle).abs()
        ),
    )
}

fn criterion_7() -> Outcome {
    let spec: LqSpec = serde_json::from_value(json!({
        "n": 1, "mu": 1, "mw": 1,
        "P": [[0]], "Q": [[1]], "A": [[0]], "B": [[0]], "C": [[1]], "A0": [[1]]
    }))
    .unwrap();
    let flow = validate_lq(&spec, 1.0).unwrap();
    let sol = solve_impulsive_riccati(&flow, 1e-3).unwrap();
    let flow_err = sol
        .rows()
        .iter()
        .map(|(s, _, k)| (k[(0, 0)] - 1.0 / (2.0 - s)).abs())
        .fold(0.0, f64::max);
    let case = scalar_case();
    let sol = solve_impulsive_riccati(&case.lq, 1e-3).unwrap();
    let x0 = 1.0;
    let tr = simulate_closed_loop(&case.lq, &sol, &case.sys, 0.0, &[x0], 1e-3).unwrap();
    let cost = evaluate_cost(&tr, &case.costs).unwrap().total;
    let value = sol.k_at(0.0, Side::Plus).unwrap()[(0, 0)] * x0 * x0;
    let rel = (cost - value).abs() / value;
    outcome(
        flow_err <= 1e-8 && rel <= 0.01,
        format!(
            "max |K - 1/(2-s)| {flow_err:.3e} (limit 1e-8); closed-loop cost {cost:.8} vs x'K(0)x {value:.8}, rel {rel:.3e} (limit 1e-2)"
        ),
    )
}

/// Random smooth expression over `x1..x3`, defined everywhere.
fn random_expr(rng: &mut ChaCha8Rng, depth: u32) -> String {
    if depth == 0 || rng.gen_bool(0.2) {
        return if rng.gen_bool(0.7) {
            format!("x{}", rng.gen_range(1..=3))
        } else {
            format!("{:.3}", rng.gen_range(0.1..2.0))
        };
    }
    let a = random_expr(rng, depth - 1);
    match rng.gen_range(0..12) {
        0 => format!("({a} + {})", random_expr(rng, depth - 1)),
        1 => format!("({a} - {})", random_expr(rng, depth - 1)),
        2 => format!("{a} * {}", random_expr(rng, depth - 1)),
        3 => format!("{a} / (1 + ({})^2)", random_expr(rng, depth - 1)),
        4 => format!("sin({a})"),
        5 => format!("cos({a})"),
        6 => format!("exp(sin({a}))"),
        7 => format!("log(1 + ({a})^2)"),
        8 => format!("sqrt(2 + cos({a}))"),
        9 => format!("({a})^{}", rng.gen_range(2..=3)),
        10 => format!("-({a})"),
        _ => format!("(1 + ({a})^2)^-1"),
    }
}

fn criterion_8() -> Outcome {
    let vars = ["x1", "x2", "x3"];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut passed, mut total, mut worst) = (0, 0, 0.0f64);
    while total < 100 {
        let text = random_expr(&mut rng, 4);
        let e = Expr::parse(&text, &vars).unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
        match e.eval(&x) {
            Ok(v) if v.is_finite() && v.abs() < 1e4 => {}
            _ => continue,
        }
        total += 1;
        let mut ok = true;
        for (j, var) in vars.iter().enumerate() {
            let d = e.derivative(var).eval(&x).unwrap();
            let h = 1e-5 * x[j].abs().max(1.0);
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[j] += h;
            dn[j] -= h;
            let fd = (e.eval(&up).unwrap() - e.eval(&dn).unwrap()) / (2.0 * h);
            let rel = (d - fd).abs() / d.abs().max(1.0);
            worst = worst.max(rel);
            ok &= rel <= 1e-5;
        }
        passed += ok as usize;
    }
    let bad = [
        "", "1 +", "(x1", "x1)", "foo(x1)", "x9", "x1^1.5", "min(x1)", "1 ** 2", "x1 @ 2", "sin x1", "2..3",
        "max(x1, )", "x1^t",
    ];
    let mut positioned = 0;
    for text in bad {
        let res: Result<Expr, ParseError> = Expr::parse(text, &["t", "x1"]);
        if let Err(e) = res {
            if e.pos <= text.len() && e.to_string().contains(&format!("offset {}", e.pos)) {
                positioned += 1;
            }
        }
    }
    outcome(
        passed == total && positioned == bad.len(),
        format!(
            "{passed}/{total} derivative checks within 1e-5 (worst {worst:.2e}); {positioned}/{} malformed inputs with positioned diagnostics",
            bad.len()
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "HJB vs Riccati cross-validation (scalar)", criterion_1),
        (2, "impulse jump formula vs brute force", criterion_2),
        (3, "no-impulse degeneracy", criterion_3),
        (4, "costate and extremum verification", criterion_4),
        (5, "integrator order", criterion_5),
        (6, "aftereffect solver vs enumeration", criterion_6),
        (7, "Riccati closed form and closed-loop cost", criterion_7),
        (8, "expression differentiation and diagnostics", criterion_8),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(run));
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match res {
            Ok(o) => (o.pass, o.detail),
            Err(p) => (
                false,
                format!(
                    "panicked: {}",
                    p.downcast_ref::<String>()
                        .cloned()
                        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_default()
                ),
            ),
        };
        failed += !pass as usize;
        println!(
            "criterion {id} {}: {name}: {detail} [{secs:.1}s]",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
