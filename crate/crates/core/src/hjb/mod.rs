//! Backward dynamic programming on a state grid: semi-Lagrangian steps
//! between impulse times and impulse backups at them.

mod backup;
mod grid;
mod solve;
mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backup::{
    impulse_backup, impulse_backup_aftereffect, impulse_backup_parametrized, AftereffectBackup,
    Backup, ParametrizedBackup,
};
pub use grid::{Grid, Location};
pub use solve::{solve, solve_aftereffect, solve_basic, solve_parametrized};
pub use synth::{dpp_residual, synthesize_trajectory, ResidualStats, Synthesis};

use crate::expr::EvalError;
use crate::mesh::Side;
use crate::model::{ControlSet, ImpulseCoupling};
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum HjbError {
    #[error("grid: {0}")]
    Grid(String),
    #[error("grid has {grid} dimensions but the state has {state}")]
    Dimension { grid: usize, state: usize },
    #[error("the grid solver needs fixed impulse times, not event surfaces")]
    SurfaceSchedule,
    #[error("{0} control set is empty")]
    EmptyControls(&'static str),
    #[error("the aftereffect solver needs a finite impulse control set")]
    ImpulseSetNotFinite,
    #[error("variant {variant:?} cannot handle {coupling:?} impulse coupling")]
    Coupling {
        variant: Variant,
        coupling: ImpulseCoupling,
    },
    #[error("evaluation failed at t = {t}: {source}")]
    Eval {
        t: f64,
        #[source]
        source: EvalError,
    },
    #[error("no impulse at t = {0}")]
    NotImpulseTime(f64),
    #[error("trajectory leaves the grid at t = {t}, x = {x:?}")]
    GridExit { t: f64, x: Vec<f64> },
    #[error("point {x:?} is within one grid cell of the boundary")]
    NearBoundary { x: Vec<f64> },
    #[error("no value slice at t = {0}")]
    NoSlice(f64),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub(crate) fn eval_err(t: f64) -> impl Fn(EvalError) -> HjbError {
    move |source| HjbError::Eval { t, source }
}

/// Which dynamic-programming equations were solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// `V(s, ξ)` with plain impulse conditions.
    Basic,
    /// Impulse conditions depending on `a = u(τ⁻)`; per-`a` slices at
    /// impulse times, envelope in between.
    Parametrized,
    /// Impulse conditions depending on the previous impulse control `b`;
    /// one layer per element of `W`.
    Aftereffect,
}

/// Values at one time. `layers[l]` is the grid array of layer `l` (one layer
/// except for the aftereffect variant). Parametrized `Minus` slices also
/// carry one array per sampled `a` in `per_a`, with `layers[0]` their
/// envelope.
#[derive(Debug, Clone)]
pub struct TimeSlice {
    pub s: f64,
    pub side: Side,
    pub layers: Vec<Vec<f64>>,
    pub per_a: Vec<Vec<f64>>,
    /// Foot points or jump destinations clamped into the grid while
    /// computing this slice, and the number of evaluations.
    pub clamped: u64,
    pub evaluations: u64,
}

#[derive(Debug, Clone)]
pub struct ValueFunction {
    pub grid: Grid,
    pub variant: Variant,
    /// Increasing in `s`; impulse times carry a `Minus` then a `Plus` slice.
    pub slices: Vec<TimeSlice>,
    /// Layer reported by scalar queries (the declared initial `b` for the
    /// aftereffect variant, else 0).
    pub reported_layer: usize,
    /// Parameter value of each layer (aftereffect: the elements of `W`).
    pub layer_params: Vec<Vec<f64>>,
    /// Sampled `a` values of `per_a` (parametrized variant).
    pub a_values: Vec<Vec<f64>>,
    pub impulse_times: Vec<f64>,
}

/// Argmins of one backward step, as indices into the enumerated controls.
#[derive(Debug, Clone)]
pub struct StepPolicy {
    pub t0: f64,
    pub t1: f64,
    /// `u[layer][node]`.
    pub u: Vec<Vec<u32>>,
}

/// Argmins at one impulse time.
#[derive(Debug, Clone)]
pub struct ImpulsePolicy {
    pub tau: f64,
    /// `w[layer][node]`; layers are `a` values (parametrized), previous
    /// impulse controls `b` (aftereffect) or a single layer.
    pub w: Vec<Vec<u32>>,
    /// `a*[node]`, parametrized variant only.
    pub a: Option<Vec<u32>>,
}

#[derive(Debug, Clone)]
pub struct Policy {
    pub grid: Grid,
    pub variant: Variant,
    pub u_candidates: Vec<Vec<f64>>,
    pub w_candidates: Vec<Vec<f64>>,
    /// Increasing in time.
    pub steps: Vec<StepPolicy>,
    pub impulses: Vec<ImpulsePolicy>,
}

/// Tolerance for matching query times to slice times.
fn time_tol(horizon: f64) -> f64 {
    1e-12 * horizon.max(1.0)
}

impl ValueFunction {
    pub fn horizon(&self) -> f64 {
        self.slices.last().map_or(0.0, |s| s.s)
    }

    /// Index of the slice at time `s`. At impulse times `Minus` selects the
    /// left limit and anything else the right limit.
    pub fn slice_index(&self, s: f64, side: Side) -> Option<usize> {
        let tol = time_tol(self.horizon());
        let first = self.slices.partition_point(|sl| sl.s < s - tol);
        let mut hits = (first..self.slices.len()).take_while(|&i| (self.slices[i].s - s).abs() <= tol);
        let a = hits.next()?;
        match (hits.next(), side) {
            (Some(_), Side::Minus) | (None, _) => Some(a),
            (Some(b), _) => Some(b),
        }
    }

    /// `V(s, x)` on a layer, multilinear in `x` and linear in `s` between
    /// slices of the same inter-impulse interval.
    pub fn value_on_layer(&self, s: f64, side: Side, x: &[f64], layer: usize) -> Result<f64, HjbError> {
        if let Some(i) = self.slice_index(s, side) {
            return Ok(self.grid.interpolate(&self.slices[i].layers[layer], x).0);
        }
        let hi = self.slices.partition_point(|sl| sl.s < s);
        if hi == 0 || hi >= self.slices.len() {
            return Err(HjbError::NoSlice(s));
        }
        let (a, b) = (&self.slices[hi - 1], &self.slices[hi]);
        let w = (s - a.s) / (b.s - a.s);
        let va = self.grid.interpolate(&a.layers[layer], x).0;
        let vb = self.grid.interpolate(&b.layers[layer], x).0;
        Ok((1.0 - w) * va + w * vb)
    }

    pub fn value(&self, s: f64, side: Side, x: &[f64]) -> Result<f64, HjbError> {
        self.value_on_layer(s, side, x, self.reported_layer)
    }

    /// Central differences of the interpolated `V` with one grid spacing per
    /// axis; `x` must keep one cell away from the boundary.
    pub fn gradient_on_layer(&self, s: f64, side: Side, x: &[f64], layer: usize) -> Result<Vec<f64>, HjbError> {
        let g = &self.grid;
        let mut out = Vec::with_capacity(g.dim());
        let mut probe = x.to_vec();
        for d in 0..g.dim() {
            let h = g.spacing(d);
            if x[d] - h < g.lo[d] - 1e-12 || x[d] + h > g.hi[d] + 1e-12 {
                return Err(HjbError::NearBoundary { x: x.to_vec() });
            }
            probe[d] = x[d] + h;
            let up = self.value_on_layer(s, side, &probe, layer)?;
            probe[d] = x[d] - h;
            let down = self.value_on_layer(s, side, &probe, layer)?;
            probe[d] = x[d];
            out.push((up - down) / (2.0 * h));
        }
        Ok(out)
    }

    pub fn gradient(&self, s: f64, side: Side, x: &[f64]) -> Result<Vec<f64>, HjbError> {
        self.gradient_on_layer(s, side, x, self.reported_layer)
    }

    /// Total clamped evaluations over total evaluations.
    pub fn clamp_fraction(&self) -> f64 {
        let (c, e) = self
            .slices
            .iter()
            .fold((0u64, 0u64), |(c, e), s| (c + s.clamped, e + s.evaluations));
        if e == 0 {
            0.0
        } else {
            c as f64 / e as f64
        }
    }
}

impl Policy {
    fn step_index(&self, t: f64) -> usize {
        let tol = time_tol(self.steps.last().map_or(1.0, |s| s.t1));
        self.steps
            .partition_point(|st| st.t0 <= t + tol)
            .clamp(1, self.steps.len())
            - 1
    }

    pub fn impulse_index(&self, tau: f64) -> Option<usize> {
        let tol = 1e-9 * tau.abs().max(1.0);
        self.impulses.iter().position(|p| (p.tau - tau).abs() <= tol)
    }

    /// Continuous control at `(t, x)` from the step containing `t`, by
    /// nearest-node lookup.
    pub fn u_at(&self, t: f64, x: &[f64], layer: usize) -> &[f64] {
        let st = &self.steps[self.step_index(t)];
        let k = st.u[layer][self.grid.nearest(x)];
        &self.u_candidates[k as usize]
    }

    pub fn w_at(&self, impulse: usize, x: &[f64], layer: usize) -> &[f64] {
        let k = self.impulses[impulse].w[layer][self.grid.nearest(x)];
        &self.w_candidates[k as usize]
    }

    /// Minimizing `a` at an impulse (parametrized variant).
    pub fn a_at(&self, impulse: usize, x: &[f64]) -> Option<&[f64]> {
        let a = self.impulses[impulse].a.as_ref()?;
        Some(&self.u_candidates[a[self.grid.nearest(x)] as usize])
    }
}

pub(crate) fn enumerate_nonempty(set: &ControlSet, what: &'static str) -> Result<Vec<Vec<f64>>, HjbError> {
    let c = set.enumerate();
    if c.is_empty() {
        return Err(HjbError::EmptyControls(what));
    }
    Ok(c)
}
