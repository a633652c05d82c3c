//! Hamiltonians, costate integration with jumps and extremum checks along a
//! candidate optimal trajectory.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::hjb::{HjbError, ValueFunction, Variant};
use crate::mesh::Side;
use crate::model::{flow_vars, impulse_vars, terminal_vars, ControlSet, CostSpec, HybridSystem};
use crate::sim::Trajectory;

#[derive(Debug, Error)]
pub enum PmpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("trajectory row {row} carries no usable control")]
    MissingControls { row: usize },
    #[error("costate is not finite at s = {t}")]
    NonFinite { t: f64 },
    #[error("evaluation failed at s = {t}: {source}")]
    Eval {
        t: f64,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    Hjb(#[from] HjbError),
}

fn eval_err(t: f64) -> impl Fn(EvalError) -> PmpError {
    move |source| PmpError::Eval { t, source }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), PmpError> {
    if got != want {
        return Err(PmpError::Dimension(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

/// `H(s, x, p, u) = ⟨p, f(s, x, u)⟩ + F(s, x, u)`.
pub fn hamiltonian(
    sys: &HybridSystem,
    costs: &CostSpec,
    s: f64,
    x: &[f64],
    p: &[f64],
    u: &[f64],
) -> Result<f64, PmpError> {
    check_len("x", x.len(), sys.n)?;
    check_len("p", p.len(), sys.n)?;
    check_len("u", u.len(), sys.mu)?;
    let mut buf = Vec::new();
    let mut f = vec![0.0; sys.n];
    sys.eval_flow(&mut buf, s, x, u, &mut f).map_err(eval_err(s))?;
    let running = costs.running(&mut buf, s, x, u).map_err(eval_err(s))?;
    Ok(dot(p, &f) + running)
}

/// `K(s, x, p, w) = ⟨p, I(s, x, w, extra)⟩ + Φ(s, x, w, extra)`.
#[allow(clippy::too_many_arguments)]
pub fn impulsive_hamiltonian(
    sys: &HybridSystem,
    costs: &CostSpec,
    s: f64,
    x: &[f64],
    p: &[f64],
    w: &[f64],
    extra: &[f64],
) -> Result<f64, PmpError> {
    check_len("x", x.len(), sys.n)?;
    check_len("p", p.len(), sys.n)?;
    check_len("w", w.len(), sys.mw)?;
    check_len("impulse extra argument", extra.len(), sys.extra_dim())?;
    let mut buf = Vec::new();
    let mut jump = vec![0.0; sys.n];
    sys.eval_impulse(&mut buf, s, x, w, extra, &mut jump)
        .map_err(eval_err(s))?;
    let cost = costs.impulse(&mut buf, s, x, w, extra).map_err(eval_err(s))?;
    Ok(dot(p, &jump) + cost)
}

/// A system with the symbolic state partials the costate equations need.
#[derive(Debug, Clone)]
pub struct PmpModel {
    pub sys: HybridSystem,
    pub costs: CostSpec,
    /// `df[i][j] = ∂f_i/∂x_j`.
    df: Vec<Vec<Expr>>,
    d_running: Vec<Expr>,
    /// `di[i][j] = ∂I_i/∂x_j`.
    di: Vec<Vec<Expr>>,
    d_impulse: Vec<Expr>,
    d_terminal: Vec<Expr>,
}

impl PmpModel {
    pub fn new(sys: &HybridSystem, costs: &CostSpec) -> Self {
        let flow = flow_vars(sys.n, sys.mu);
        let jump = impulse_vars(sys.n, sys.mu, sys.mw, sys.coupling);
        let term = terminal_vars(sys.n);
        // state variables sit right after `t` in flow and impulse lists
        let grad = |e: &Expr, names: &[String], offset: usize| -> Vec<Expr> {
            (0..sys.n).map(|j| e.derivative(&names[offset + j])).collect()
        };
        PmpModel {
            sys: sys.clone(),
            costs: costs.clone(),
            df: sys.f.iter().map(|e| grad(e, &flow, 1)).collect(),
            d_running: grad(&costs.running, &flow, 1),
            di: sys.impulse.iter().map(|e| grad(e, &jump, 1)).collect(),
            d_impulse: grad(&costs.impulse, &jump, 1),
            d_terminal: grad(&costs.terminal, &term, 0),
        }
    }

    fn fill(buf: &mut Vec<f64>, t: f64, parts: &[&[f64]]) {
        buf.clear();
        buf.push(t);
        for p in parts {
            buf.extend_from_slice(p);
        }
    }

    /// `out = ∂H/∂x(s, x, p, u) = Σ_i p_i ∂f_i/∂x + ∂F/∂x`.
    pub fn dh_dx(&self, buf: &mut Vec<f64>, s: f64, x: &[f64], p: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), PmpError> {
        Self::fill(buf, s, &[x, u]);
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = self.d_running[j].eval(buf).map_err(eval_err(s))?;
            for (i, row) in self.df.iter().enumerate() {
                acc += p[i] * row[j].eval(buf).map_err(eval_err(s))?;
            }
            *o = acc;
        }
        Ok(())
    }

    /// `out = ∂K/∂x(s, x, p, w, extra) = Σ_i p_i ∂I_i/∂x + ∂Φ/∂x`.
    #[allow(clippy::too_many_arguments)]
    pub fn dk_dx(
        &self,
        buf: &mut Vec<f64>,
        s: f64,
        x: &[f64],
        p: &[f64],
        w: &[f64],
        extra: &[f64],
        out: &mut [f64],
    ) -> Result<(), PmpError> {
        Self::fill(buf, s, &[x, w, extra]);
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = self.d_impulse[j].eval(buf).map_err(eval_err(s))?;
            for (i, row) in self.di.iter().enumerate() {
                acc += p[i] * row[j].eval(buf).map_err(eval_err(s))?;
            }
            *o = acc;
        }
        Ok(())
    }

    pub fn terminal_gradient(&self, x: &[f64]) -> Result<Vec<f64>, PmpError> {
        self.d_terminal
            .iter()
            .map(|e| e.eval(x).map_err(eval_err(self.sys.horizon)))
            .collect()
    }

    fn flow_kinks(&self, buf: &mut Vec<f64>, s: f64, x: &[f64], u: &[f64]) -> usize {
        Self::fill(buf, s, &[x, u]);
        self.sys.f.iter().map(|e| e.kinks_hit(buf)).sum::<usize>() + self.costs.running.kinks_hit(buf)
    }

    fn impulse_kinks(&self, buf: &mut Vec<f64>, s: f64, x: &[f64], w: &[f64], extra: &[f64]) -> usize {
        Self::fill(buf, s, &[x, w, extra]);
        self.sys.impulse.iter().map(|e| e.kinks_hit(buf)).sum::<usize>() + self.costs.impulse.kinks_hit(buf)
    }
}

/// Costate at one impulse time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostateJump {
    pub t: f64,
    /// Row of the `Minus` entry in the companion trajectory.
    pub row: usize,
    pub p_plus: Vec<f64>,
    pub p_minus: Vec<f64>,
    /// Extra impulse argument the jump was evaluated with (`a` for the
    /// parametrized problem, `b` for aftereffect), empty otherwise.
    pub extra: Vec<f64>,
}

/// Costate sampled on the rows of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostatePath {
    pub times: Vec<f64>,
    pub sides: Vec<Side>,
    pub costates: Vec<Vec<f64>>,
    pub jumps: Vec<CostateJump>,
    /// Evaluations along the path that landed on a kink of `f`, `F`, `I` or `Φ`.
    pub kink_hits: usize,
}

/// Integrates `dp/ds = −∂H*/∂x` backward from `p(T⁻) = ∇F0(x(T⁻))` with RK4
/// on the trajectory mesh, applying `p⁻ = p⁺ + ∂K*/∂x(τ, x⁻, p⁺)` at each
/// jump. States inside a step come from cubic Hermite interpolation.
pub fn integrate_costate(model: &PmpModel, traj: &Trajectory) -> Result<CostatePath, PmpError> {
    let sys = &model.sys;
    let len = traj.len();
    if len == 0 {
        return Err(PmpError::Dimension("empty trajectory".into()));
    }
    check_len("trajectory state", traj.n, sys.n)?;
    for (row, u) in traj.controls.iter().enumerate() {
        if u.len() != sys.mu || u.iter().any(|c| !c.is_finite()) {
            return Err(PmpError::MissingControls { row });
        }
    }
    if traj.controls.len() != len {
        return Err(PmpError::MissingControls { row: traj.controls.len() });
    }
    let n = sys.n;
    let mut buf = Vec::new();
    let mut p = vec![vec![0.0; n]; len];
    p[len - 1] = model.terminal_gradient(&traj.states[len - 1])?;
    let mut kink_hits = 0;
    let mut jumps = Vec::new();
    let (mut f0, mut f1) = (vec![0.0; n], vec![0.0; n]);
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut probe = vec![0.0; n];
    let mut jump_iter = traj.jumps.iter().rev().peekable();
    for i in (1..len).rev() {
        let (t0, t1) = (traj.times[i - 1], traj.times[i]);
        if traj.sides[i - 1] == Side::Minus && traj.sides[i] == Side::Plus {
            let rec = jump_iter
                .next_if(|r| r.row == i - 1)
                .ok_or(PmpError::Dimension(format!("no jump record for row {}", i - 1)))?;
            let mut d = vec![0.0; n];
            model.dk_dx(&mut buf, t1, &rec.x_minus, &p[i], &rec.w, &rec.extra, &mut d)?;
            kink_hits += model.impulse_kinks(&mut buf, t1, &rec.x_minus, &rec.w, &rec.extra);
            let minus: Vec<f64> = p[i].iter().zip(&d).map(|(a, b)| a + b).collect();
            jumps.push(CostateJump {
                t: t1,
                row: i - 1,
                p_plus: p[i].clone(),
                p_minus: minus.clone(),
                extra: rec.extra.clone(),
            });
            p[i - 1] = minus;
        } else {
            let u = &traj.controls[i - 1];
            let (x0, x1) = (&traj.states[i - 1], &traj.states[i]);
            let h = t1 - t0;
            sys.eval_flow(&mut buf, t0, x0, u, &mut f0).map_err(eval_err(t0))?;
            sys.eval_flow(&mut buf, t1, x1, u, &mut f1).map_err(eval_err(t1))?;
            kink_hits += model.flow_kinks(&mut buf, t0, x0, u);
            let xm: Vec<f64> = (0..n)
                .map(|j| 0.5 * (x0[j] + x1[j]) + h / 8.0 * (f0[j] - f1[j]))
                .collect();
            let tm = 0.5 * (t0 + t1);
            let p1 = p[i].clone();
            // dp/ds = −∂H/∂x, integrated from t1 down to t0
            model.dh_dx(&mut buf, t1, x1, &p1, u, &mut k1)?;
            for j in 0..n {
                probe[j] = p1[j] + 0.5 * h * k1[j];
            }
            model.dh_dx(&mut buf, tm, &xm, &probe, u, &mut k2)?;
            for j in 0..n {
                probe[j] = p1[j] + 0.5 * h * k2[j];
            }
            model.dh_dx(&mut buf, tm, &xm, &probe, u, &mut k3)?;
            for j in 0..n {
                probe[j] = p1[j] + h * k3[j];
            }
            model.dh_dx(&mut buf, t0, x0, &probe, u, &mut k4)?;
            p[i - 1] = (0..n)
                .map(|j| p1[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
                .collect();
        }
        if p[i - 1].iter().any(|c| !c.is_finite()) {
            return Err(PmpError::NonFinite { t: t0 });
        }
    }
    jumps.reverse();
    if kink_hits > 0 {
        log::warn!("{kink_hits} evaluations along the trajectory hit an expression kink");
    }
    Ok(CostatePath {
        times: traj.times.clone(),
        sides: traj.sides.clone(),
        costates: p,
        jumps,
        kink_hits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarginKind {
    H,
    K,
}

impl MarginKind {
    pub fn symbol(self) -> &'static str {
        match self {
            MarginKind::H => "H",
            MarginKind::K => "K",
        }
    }
}

/// `H(u) − H(u*)` or `K(w) − K(w*)` for one sampled control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub s: f64,
    pub kind: MarginKind,
    pub control: Vec<f64>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremumReport {
    pub margins: Vec<Margin>,
    pub tol: f64,
    /// Margins below `−tol`.
    pub violations: usize,
    pub min_margin: f64,
}

/// Evaluates the extremum conditions: at every step start `H(u) ≥ H(u*)`
/// over `u_samples`, at every jump `K(w) ≥ K(w*)` over `w_samples` with the
/// right-limit costate.
pub fn check_extremum(
    model: &PmpModel,
    traj: &Trajectory,
    costate: &CostatePath,
    u_samples: &[Vec<f64>],
    w_samples: &[Vec<f64>],
    tol: f64,
) -> Result<ExtremumReport, PmpError> {
    let (sys, costs) = (&model.sys, &model.costs);
    check_len("costate path", costate.costates.len(), traj.len())?;
    let rows: Vec<usize> = (0..traj.len().saturating_sub(1))
        .filter(|&i| traj.sides[i] != Side::Minus)
        .collect();
    let per_row: Vec<Vec<Margin>> = rows
        .par_iter()
        .map(|&i| {
            let (s, x, p, u) = (traj.times[i], &traj.states[i], &costate.costates[i], &traj.controls[i]);
            let star = hamiltonian(sys, costs, s, x, p, u)?;
            u_samples
                .iter()
                .map(|v| {
                    Ok(Margin {
                        s,
                        kind: MarginKind::H,
                        control: v.clone(),
                        margin: hamiltonian(sys, costs, s, x, p, v)? - star,
                    })
                })
                .collect()
        })
        .collect::<Result<_, PmpError>>()?;
    let mut margins: Vec<Margin> = per_row.into_iter().flatten().collect();
    for rec in &traj.jumps {
        let p_plus = &costate.costates[rec.row + 1];
        let star = impulsive_hamiltonian(sys, costs, rec.t, &rec.x_minus, p_plus, &rec.w, &rec.extra)?;
        for v in w_samples {
            margins.push(Margin {
                s: rec.t,
                kind: MarginKind::K,
                control: v.clone(),
                margin: impulsive_hamiltonian(sys, costs, rec.t, &rec.x_minus, p_plus, v, &rec.extra)? - star,
            });
        }
    }
    margins.sort_by(|a, b| a.s.total_cmp(&b.s).then((a.kind as u8).cmp(&(b.kind as u8))));
    let violations = margins.iter().filter(|m| m.margin < -tol).count();
    let min_margin = margins.iter().map(|m| m.margin).fold(f64::INFINITY, f64::min);
    if margins.iter().any(|m| !m.margin.is_finite()) {
        return Err(PmpError::NonFinite {
            t: margins.iter().find(|m| !m.margin.is_finite()).map_or(0.0, |m| m.s),
        });
    }
    Ok(ExtremumReport {
        margins,
        tol,
        violations,
        min_margin,
    })
}

/// Costate against central differences of the grid value function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientComparison {
    /// `‖p − ∇V‖∞ / ‖∇V‖∞` (absolute where `∇V` vanishes).
    pub max_rel: f64,
    pub mean_rel: f64,
    pub max_abs: f64,
    pub count: usize,
}

/// Compares `p(s)` with `∇V(s, x(s))` at every row of the trajectory. For
/// the aftereffect variant the layer follows the impulse controls applied.
pub fn costate_vs_grad_v(
    costate: &CostatePath,
    vf: &ValueFunction,
    traj: &Trajectory,
) -> Result<GradientComparison, PmpError> {
    check_len("costate path", costate.costates.len(), traj.len())?;
    let mut layer = vf.reported_layer;
    let mut jumps = traj.jumps.iter().peekable();
    let (mut max_rel, mut sum, mut max_abs): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for i in 0..traj.len() {
        if vf.variant == Variant::Aftereffect && traj.sides[i] == Side::Plus {
            if let Some(rec) = jumps.next_if(|r| r.row + 1 == i) {
                layer = ControlSet::nearest_index(&vf.layer_params, &rec.w);
            }
        }
        let g = vf.gradient_on_layer(traj.times[i], traj.sides[i], &traj.states[i], layer)?;
        let p = &costate.costates[i];
        let diff = p.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let rel = if scale > 1e-12 { diff / scale } else { diff };
        max_rel = max_rel.max(rel);
        max_abs = max_abs.max(diff);
        sum += rel;
    }
    let count = traj.len();
    Ok(GradientComparison {
        max_rel,
        mean_rel: if count == 0 { 0.0 } else { sum / count as f64 },
        max_abs,
        count,
    })
}
