use serde::Serialize;

use super::{enumerate_nonempty, HjbError, Policy, ValueFunction, Variant};
use crate::mesh::Side;
use crate::model::{ControlSet, CostSpec, HybridSystem};
use crate::sim::{evaluate_cost, integrate, ControlSignal, CostBreakdown, Trajectory};

/// Closed-loop rollout of a solved policy.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub trajectory: Trajectory,
    pub cost: CostBreakdown,
    /// Interpolated `V(s, ξ)` at the start point.
    pub value: f64,
}

/// Simulates from `(s, ξ)` taking `u` and `w` from the policy by
/// nearest-node lookup, on the solver's time mesh.
pub fn synthesize_trajectory(
    vf: &ValueFunction,
    pol: &Policy,
    sys: &HybridSystem,
    costs: &CostSpec,
    s: f64,
    xi: &[f64],
) -> Result<Synthesis, HjbError> {
    if !pol.grid.contains(xi) {
        return Err(HjbError::GridExit { t: s, x: xi.to_vec() });
    }
    let variant = pol.variant;
    let u = ControlSignal::feedback(|q| {
        let layer = match variant {
            Variant::Aftereffect => ControlSet::nearest_index(&pol.w_candidates, q.last_impulse),
            _ => 0,
        };
        if variant == Variant::Parametrized {
            // the control just before an impulse is the minimizing `a`
            if let Some(k) = pol.impulse_index(q.step_end) {
                if let Some(a) = pol.a_at(k, q.x) {
                    return a.to_vec();
                }
            }
        }
        pol.u_at(q.t, q.x, layer).to_vec()
    });
    let w = ControlSignal::feedback(|q| {
        let Some(k) = pol.impulse_index(q.t) else {
            return vec![0.0; sys.mw];
        };
        let layer = match variant {
            Variant::Basic => 0,
            Variant::Parametrized => ControlSet::nearest_index(&pol.u_candidates, q.extra),
            Variant::Aftereffect => ControlSet::nearest_index(&pol.w_candidates, q.extra),
        };
        pol.w_at(k, q.x, layer).to_vec()
    });
    let trajectory = integrate(sys, &u, &w, s, xi, pol.grid.dt)?;
    if let Some(i) = trajectory.states.iter().position(|x| !pol.grid.contains(x)) {
        return Err(HjbError::GridExit {
            t: trajectory.times[i],
            x: trajectory.states[i].clone(),
        });
    }
    let cost = evaluate_cost(&trajectory, costs)?;
    let value = vf.value(s, Side::Plus, xi)?;
    Ok(Synthesis {
        trajectory,
        cost,
        value,
    })
}

/// Residual of the one-step dynamic-programming relation at sample points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualStats {
    pub max: f64,
    pub mean: f64,
    pub count: usize,
    /// `max / h²` with `h` the largest grid spacing.
    pub c: f64,
}

/// `|V(s, ξ) − min_u {δF + V(s + δ, ξ + δf)}|` at points `(s, ξ)` where `s`
/// is the start of a backward step (not an impulse left limit).
pub fn dpp_residual(
    vf: &ValueFunction,
    sys: &HybridSystem,
    costs: &CostSpec,
    points: &[(f64, Vec<f64>)],
) -> Result<ResidualStats, HjbError> {
    let grid = &vf.grid;
    let u_cands = enumerate_nonempty(&sys.u_set, "continuous")?;
    let layer = vf.reported_layer;
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    for (s, x) in points {
        let i = vf.slice_index(*s, Side::Plus).ok_or(HjbError::NoSlice(*s))?;
        if i + 1 >= vf.slices.len() || vf.slices[i].side == Side::Minus {
            return Err(HjbError::NoSlice(*s));
        }
        let (now, next) = (&vf.slices[i], &vf.slices[i + 1]);
        let v = grid.interpolate(&now.layers[layer], x).0;
        // evaluate the step's minimization at `x` alone
        let shifted = ShiftedStep { grid, x };
        let best = shifted.min_step(sys, costs, &u_cands, &next.layers[layer], now.s, next.s)?;
        let r = (v - best).abs();
        max = max.max(r);
        sum += r;
    }
    let count = points.len();
    let h = grid.max_spacing();
    Ok(ResidualStats {
        max,
        mean: if count == 0 { 0.0 } else { sum / count as f64 },
        count,
        c: max / (h * h),
    })
}

/// The backward step's minimization evaluated at an arbitrary point.
struct ShiftedStep<'g> {
    grid: &'g super::Grid,
    x: &'g [f64],
}

impl ShiftedStep<'_> {
    fn min_step(
        &self,
        sys: &HybridSystem,
        costs: &CostSpec,
        u_cands: &[Vec<f64>],
        later: &[f64],
        t0: f64,
        t1: f64,
    ) -> Result<f64, HjbError> {
        let delta = t1 - t0;
        let mut buf = Vec::new();
        let mut f = vec![0.0; sys.n];
        let mut best = f64::INFINITY;
        for u in u_cands {
            sys.eval_flow(&mut buf, t0, self.x, u, &mut f)
                .map_err(super::eval_err(t0))?;
            let running = costs.running(&mut buf, t0, self.x, u).map_err(super::eval_err(t0))?;
            let foot: Vec<f64> = self.x.iter().zip(&f).map(|(x, fx)| x + delta * fx).collect();
            let v = delta * running + self.grid.interpolate(later, &foot).0;
            best = best.min(v);
        }
        Ok(best)
    }
}
