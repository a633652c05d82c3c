//! Sampled-data systems: a continuous part driven through interpolation
//! operators by a discrete recursion, and their reduction to an impulsive ODE.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::controls::ControlSet;
use super::system::{
    check_times, flow_vars, impulse_vars, terminal_vars, ControlsSpec, CostSpec, CostsSpec,
    HybridSystem, ImpulseCoupling, ImpulseSchedule, ValidationErrors,
};
use crate::expr::{indexed_names, EvalError, Expr};

/// Which arguments the continuous dynamics and the discrete transition see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampledVariant {
    /// `f(t, y, u, pz, qw)`, `g(t, y, u, z, w)`.
    C1D1,
    /// `f(t, y, u, pz, qw)`, `g(t, y, z, w)`.
    C1D2,
    /// `f(t, y, u, pz)`, `g(t, y, u, z, w)`.
    C2D1,
    /// `f(t, y, u, pz)`, `g(t, y, z, w)`.
    C2D2,
}

impl SampledVariant {
    /// The held discrete control enters the continuous dynamics.
    pub fn flow_sees_w(self) -> bool {
        matches!(self, SampledVariant::C1D1 | SampledVariant::C1D2)
    }

    /// The discrete transition reads the continuous control.
    pub fn jump_sees_u(self) -> bool {
        matches!(self, SampledVariant::C1D1 | SampledVariant::C2D1)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("time {t} outside [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },
    #[error("no discrete sample for interval {interval}")]
    MissingSample { interval: usize },
    #[error("sample has {got} components, operator expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Variables of basis functions: absolute time and the start of the
/// containing interval.
pub fn basis_vars() -> Vec<String> {
    vec!["t".into(), "tk".into()]
}

/// `(p z)(t)_i = Σ_j φ_ij(t, tk) z_j(τ_k)` on `[τ_k, τ_{k+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationOperator {
    /// `None` is the zero-order hold (identity basis).
    basis: Option<Vec<Vec<Expr>>>,
}

impl InterpolationOperator {
    pub fn zero_order_hold() -> Self {
        InterpolationOperator { basis: None }
    }

    /// Row-major basis matrix over [`basis_vars`].
    pub fn from_basis(basis: Vec<Vec<Expr>>) -> Self {
        InterpolationOperator { basis: Some(basis) }
    }

    pub fn basis(&self) -> Option<&[Vec<Expr>]> {
        self.basis.as_deref()
    }

    /// Dimension of the continuous-time signal for a discrete signal of
    /// dimension `input_dim`.
    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.basis.as_ref().map_or(input_dim, Vec::len)
    }

    pub fn uses_interval_start(&self) -> bool {
        self.basis
            .iter()
            .flatten()
            .flatten()
            .any(|e| e.references("tk"))
    }

    /// Applies the basis to one held sample.
    pub fn apply(&self, t: f64, tk: f64, sample: &[f64]) -> Result<Vec<f64>, ModelError> {
        match &self.basis {
            None => Ok(sample.to_vec()),
            Some(rows) => rows
                .iter()
                .map(|row| {
                    if row.len() != sample.len() {
                        return Err(ModelError::Dimension {
                            expected: row.len(),
                            got: sample.len(),
                        });
                    }
                    let mut acc = 0.0;
                    for (phi, z) in row.iter().zip(sample) {
                        acc += phi.eval(&[t, tk])? * z;
                    }
                    Ok(acc)
                })
                .collect(),
        }
    }
}

/// Evaluates the interpolated signal at `t`. `samples[k]` is the discrete
/// value held from `τ_k` (with `τ_0 = 0`), `times` are `τ_1 < … < τ_K`.
pub fn interpolate(
    op: &InterpolationOperator,
    samples: &[Vec<f64>],
    times: &[f64],
    horizon: f64,
    t: f64,
) -> Result<Vec<f64>, ModelError> {
    if !(0.0..=horizon).contains(&t) {
        return Err(ModelError::OutOfRange { t, horizon });
    }
    let k = times.partition_point(|&tau| tau <= t);
    let tk = if k == 0 { 0.0 } else { times[k - 1] };
    let sample = samples
        .get(k)
        .ok_or(ModelError::MissingSample { interval: k })?;
    op.apply(t, tk, sample)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpolationSpec {
    #[default]
    ZeroOrderHold,
    /// Row-major matrix of expressions in `t` and `tk`.
    Basis(Vec<Vec<String>>),
}

/// `sampled_data` block of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampledDataSpec {
    pub variant: SampledVariant,
    pub ny: usize,
    pub f: Vec<String>,
    pub g: Vec<String>,
    #[serde(default)]
    pub p: InterpolationSpec,
    #[serde(default)]
    pub q: InterpolationSpec,
    pub times: Vec<f64>,
    pub controls: ControlsSpec,
    pub z0: Vec<f64>,
    #[serde(default)]
    pub w0: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SampledDataSystem {
    pub variant: SampledVariant,
    pub ny: usize,
    pub mu: usize,
    pub mz: usize,
    pub mw: usize,
    /// Over [`sampled_flow_vars`].
    pub f: Vec<Expr>,
    /// Over [`sampled_jump_vars`].
    pub g: Vec<Expr>,
    pub p: InterpolationOperator,
    pub q: InterpolationOperator,
    pub times: Vec<f64>,
    pub horizon: f64,
    pub u_set: ControlSet,
    pub w_set: ControlSet,
    pub z0: Vec<f64>,
    /// Discrete control held on `[0, τ_1)` (C1 variants).
    pub w0: Vec<f64>,
}

/// `t, y.., u.., pz.., [qw..]`.
pub fn sampled_flow_vars(variant: SampledVariant, ny: usize, mu: usize, np: usize, nq: usize) -> Vec<String> {
    let mut v = vec!["t".to_string()];
    v.extend(indexed_names("y", ny));
    v.extend(indexed_names("u", mu));
    v.extend(indexed_names("pz", np));
    if variant.flow_sees_w() {
        v.extend(indexed_names("qw", nq));
    }
    v
}

/// `t, y.., [u..], z.., w..`.
pub fn sampled_jump_vars(variant: SampledVariant, ny: usize, mu: usize, mz: usize, mw: usize) -> Vec<String> {
    let mut v = vec!["t".to_string()];
    v.extend(indexed_names("y", ny));
    if variant.jump_sees_u() {
        v.extend(indexed_names("u", mu));
    }
    v.extend(indexed_names("z", mz));
    v.extend(indexed_names("w", mw));
    v
}

fn cost_vars(head: &[&str], ny: usize, mz: usize, tail: &[(&str, usize)]) -> Vec<String> {
    let mut v: Vec<String> = head.iter().map(|s| s.to_string()).collect();
    v.extend(indexed_names("y", ny));
    v.extend(indexed_names("z", mz));
    for (prefix, count) in tail {
        v.extend(indexed_names(prefix, *count));
    }
    v
}

fn build_operator(
    errs: &mut ValidationErrors,
    location: &str,
    spec: &InterpolationSpec,
    input_dim: usize,
) -> InterpolationOperator {
    match spec {
        InterpolationSpec::ZeroOrderHold => InterpolationOperator::zero_order_hold(),
        InterpolationSpec::Basis(rows) => {
            let mut parsed = Vec::with_capacity(rows.len());
            for (i, row) in rows.iter().enumerate() {
                if row.len() != input_dim {
                    errs.push(
                        format!("{location}[{i}]"),
                        format!("basis row has {} functions, discrete signal has {input_dim} components", row.len()),
                    );
                }
                if let Some(r) = errs.parse_all(&format!("{location}[{i}]"), row, &basis_vars()) {
                    parsed.push(r);
                }
            }
            InterpolationOperator::from_basis(parsed)
        }
    }
}

/// Validates a sampled-data description together with costs written over
/// `t, y.., z.., u..` (running), `t, y.., z.., w.., [u..]` (impulse) and
/// `y.., z..` (terminal).
pub fn validate_sampled(
    spec: &SampledDataSpec,
    costs: &CostsSpec,
    horizon: f64,
) -> Result<(SampledDataSystem, CostSpec), ValidationErrors> {
    let mut errs = ValidationErrors::default();
    let variant = spec.variant;
    let (ny, mz) = (spec.ny, spec.z0.len());
    let mu = spec.controls.u.dim();
    let mw = spec.controls.w.dim();
    if !(horizon > 0.0 && horizon.is_finite()) {
        errs.push("horizon", "horizon must be positive and finite");
    }
    if ny + mz == 0 {
        errs.push("sampled_data", "need at least one continuous or discrete state");
    }
    for (name, set) in [("u", &spec.controls.u), ("w", &spec.controls.w)] {
        if let Err(msg) = set.validate() {
            errs.push(format!("sampled_data.controls.{name}"), msg);
        }
    }
    check_times(&mut errs, "sampled_data.times", &spec.times, horizon);
    if spec.f.len() != ny {
        errs.push("sampled_data.f", format!("expected {ny} expressions, got {}", spec.f.len()));
    }
    if spec.g.len() != mz {
        errs.push("sampled_data.g", format!("expected {mz} expressions, got {}", spec.g.len()));
    }
    let p = build_operator(&mut errs, "sampled_data.p", &spec.p, mz);
    let q = build_operator(&mut errs, "sampled_data.q", &spec.q, mw);
    let w0 = if variant.flow_sees_w() {
        match &spec.w0 {
            Some(w0) if w0.len() == mw => w0.clone(),
            Some(w0) => {
                errs.push("sampled_data.w0", format!("expected {mw} components, got {}", w0.len()));
                Vec::new()
            }
            None => {
                errs.push("sampled_data.w0", "C1 variants need the discrete control held before the first sample");
                Vec::new()
            }
        }
    } else {
        Vec::new()
    };
    let (np, nq) = (p.output_dim(mz), q.output_dim(mw));
    let f = errs.parse_all("sampled_data.f", &spec.f, &sampled_flow_vars(variant, ny, mu, np, nq));
    let g = errs.parse_all("sampled_data.g", &spec.g, &sampled_jump_vars(variant, ny, mu, mz, mw));

    let running = errs.parse("costs.F".into(), &costs.running, &cost_vars(&["t"], ny, mz, &[("u", mu)]));
    let jump_tail: Vec<(&str, usize)> = if variant.jump_sees_u() {
        vec![("w", mw), ("u", mu)]
    } else {
        vec![("w", mw)]
    };
    let impulse = errs.parse("costs.Phi".into(), &costs.impulse, &cost_vars(&["t"], ny, mz, &jump_tail));
    let terminal = errs.parse("costs.F0".into(), &costs.terminal, &cost_vars(&[], ny, mz, &[]));

    if !errs.is_empty() {
        return Err(errs);
    }
    let sd = SampledDataSystem {
        variant,
        ny,
        mu,
        mz,
        mw,
        f: f.expect("parsed"),
        g: g.expect("parsed"),
        p,
        q,
        times: spec.times.clone(),
        horizon,
        u_set: spec.controls.u.clone(),
        w_set: spec.controls.w.clone(),
        z0: spec.z0.clone(),
        w0,
    };
    let costs = CostSpec {
        running: running.expect("parsed"),
        impulse: impulse.expect("parsed"),
        terminal: terminal.expect("parsed"),
    };
    Ok((sd, costs))
}

/// Where each sampled-data quantity lives in the reduced state.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedLayout {
    pub y: std::ops::Range<usize>,
    pub z: std::ops::Range<usize>,
    /// Held discrete control (C1 variants).
    pub held_w: Option<std::ops::Range<usize>>,
    /// Start time of the current interval, when a basis depends on `tk`.
    pub clock: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Reduction {
    pub system: HybridSystem,
    pub costs: CostSpec,
    pub layout: ReducedLayout,
    /// Held discrete state/control values before the first impulse.
    pub z0: Vec<f64>,
    pub w0: Vec<f64>,
}

impl Reduction {
    /// Reduced initial state for continuous initial state `y0`.
    pub fn initial_state(&self, y0: &[f64]) -> Vec<f64> {
        let mut x = y0.to_vec();
        x.extend_from_slice(&self.z0);
        x.extend_from_slice(&self.w0);
        if self.layout.clock.is_some() {
            x.push(0.0);
        }
        x
    }
}

fn x_name(i: usize) -> String {
    format!("x{}", i + 1)
}

/// Text of `Σ_j basis[i][j] * x_{offset+j}` for every row `i`, with the
/// basis rebound to the reduced flow variables.
fn interpolated_rows(
    op: &InterpolationOperator,
    input_dim: usize,
    offset: usize,
    clock: Option<usize>,
    target_vars: &[String],
) -> Vec<String> {
    match op.basis() {
        None => (0..input_dim).map(|j| x_name(offset + j)).collect(),
        Some(rows) => rows
            .iter()
            .map(|row| {
                let terms: Vec<String> = row
                    .iter()
                    .enumerate()
                    .map(|(j, phi)| {
                        let rebound = phi
                            .substitute(target_vars, &|name| match (name, clock) {
                                ("tk", Some(c)) => Expr::parse(&x_name(c), target_vars).ok(),
                                _ => None,
                            })
                            .expect("basis variables map into the reduced flow variables");
                        format!("({rebound})*{}", x_name(offset + j))
                    })
                    .collect();
                if terms.is_empty() {
                    "0".into()
                } else {
                    terms.join(" + ")
                }
            })
            .collect(),
    }
}

fn rebind(e: &Expr, target: &[String], map: &dyn Fn(&str) -> Option<String>) -> Expr {
    e.substitute(target, &|name| {
        map(name).map(|text| Expr::parse(&text, target).expect("generated text parses"))
    })
    .expect("every variable has a target")
}

/// Rewrites a sampled-data system as an impulsive ODE on the augmented state
/// `[y, z, held w (C1), interval start (if a basis uses tk)]`. Between
/// sampling times `z` is constant; at `τ_k` the jump `g(τ_k, …) − z` replaces
/// `z` by the next discrete state.
pub fn reduce_sampled_data(sd: &SampledDataSystem, costs: &CostSpec) -> Reduction {
    let (ny, mz, mu, mw) = (sd.ny, sd.mz, sd.mu, sd.mw);
    let held = sd.variant.flow_sees_w();
    let needs_clock = sd.p.uses_interval_start() || (held && sd.q.uses_interval_start());
    let z_off = ny;
    let w_off = ny + mz;
    let mut n = ny + mz;
    if held {
        n += mw;
    }
    let clock = needs_clock.then_some(n);
    if needs_clock {
        n += 1;
    }
    let coupling = if sd.variant.jump_sees_u() {
        ImpulseCoupling::ControlLeftLimit
    } else {
        ImpulseCoupling::Plain
    };
    let fv = flow_vars(n, mu);
    let iv = impulse_vars(n, mu, mw, coupling);

    let pz = interpolated_rows(&sd.p, mz, z_off, clock, &fv);
    let qw = if held {
        interpolated_rows(&sd.q, mw, w_off, clock, &fv)
    } else {
        Vec::new()
    };
    let state_map = |name: &str| -> Option<String> {
        if let Some(i) = name.strip_prefix('y').and_then(|s| s.parse::<usize>().ok()) {
            return Some(x_name(i - 1));
        }
        if let Some(j) = name.strip_prefix('z').and_then(|s| s.parse::<usize>().ok()) {
            return Some(x_name(z_off + j - 1));
        }
        None
    };

    let mut f: Vec<Expr> = sd
        .f
        .iter()
        .map(|fi| {
            rebind(fi, &fv, &|name| {
                if let Some(i) = name.strip_prefix("pz").and_then(|s| s.parse::<usize>().ok()) {
                    return Some(format!("({})", pz[i - 1]));
                }
                if let Some(i) = name.strip_prefix("qw").and_then(|s| s.parse::<usize>().ok()) {
                    return Some(format!("({})", qw[i - 1]));
                }
                state_map(name)
            })
        })
        .collect();
    f.extend((ny..n).map(|_| Expr::constant(0.0, &fv)));

    let jump_map = |name: &str| -> Option<String> {
        if let Some(i) = name.strip_prefix('u').and_then(|s| s.parse::<usize>().ok()) {
            return Some(format!("a{i}"));
        }
        state_map(name)
    };
    let mut impulse: Vec<Expr> = (0..ny).map(|_| Expr::constant(0.0, &iv)).collect();
    for (j, gj) in sd.g.iter().enumerate() {
        let g = rebind(gj, &iv, &jump_map);
        let text = format!("({g}) - {}", x_name(z_off + j));
        impulse.push(Expr::parse(&text, &iv).expect("generated text parses"));
    }
    if held {
        for j in 0..mw {
            let text = format!("w{} - {}", j + 1, x_name(w_off + j));
            impulse.push(Expr::parse(&text, &iv).expect("generated text parses"));
        }
    }
    if let Some(c) = clock {
        impulse.push(Expr::parse(&format!("t - {}", x_name(c)), &iv).expect("generated text parses"));
    }

    let reduced_costs = CostSpec {
        running: rebind(&costs.running, &fv, &state_map),
        impulse: rebind(&costs.impulse, &iv, &jump_map),
        terminal: rebind(&costs.terminal, &terminal_vars(n), &state_map),
    };
    let system = HybridSystem {
        n,
        mu,
        mw,
        f,
        impulse,
        coupling,
        schedule: ImpulseSchedule::Fixed(sd.times.clone()),
        u_set: sd.u_set.clone(),
        w_set: sd.w_set.clone(),
        horizon: sd.horizon,
        initial_b: Vec::new(),
    };
    Reduction {
        system,
        costs: reduced_costs,
        layout: ReducedLayout {
            y: 0..ny,
            z: z_off..z_off + mz,
            held_w: held.then_some(w_off..w_off + mw),
            clock,
        },
        z0: sd.z0.clone(),
        w0: sd.w0.clone(),
    }
}
