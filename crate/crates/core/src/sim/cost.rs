use serde::Serialize;

use super::{eval_err, SimError, Trajectory};
use crate::mesh::Side;
use crate::model::CostSpec;

/// Terms of the cost functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub running: f64,
    pub impulse: f64,
    pub terminal: f64,
    pub total: f64,
}

/// Composite Simpson's rule on a nonuniform mesh. An odd number of intervals
/// gets the usual three-point correction on the last one.
pub fn simpson(t: &[f64], y: &[f64]) -> Option<f64> {
    let n = t.len();
    if n < 3 || y.len() != n {
        return None;
    }
    let intervals = n - 1;
    let paired = intervals - intervals % 2;
    let mut acc = 0.0;
    for i in (0..paired).step_by(2) {
        let h0 = t[i + 1] - t[i];
        let h1 = t[i + 2] - t[i + 1];
        let hs = h0 + h1;
        acc += hs / 6.0
            * ((2.0 - h1 / h0) * y[i] + hs * hs / (h0 * h1) * y[i + 1] + (2.0 - h0 / h1) * y[i + 2]);
    }
    if intervals % 2 == 1 {
        let k = n - 1;
        let h0 = t[k - 1] - t[k - 2];
        let h1 = t[k] - t[k - 1];
        let alpha = (2.0 * h1 * h1 + 3.0 * h0 * h1) / (6.0 * (h0 + h1));
        let beta = (h1 * h1 + 3.0 * h0 * h1) / (6.0 * h0);
        let eta = h1 * h1 * h1 / (6.0 * h0 * (h0 + h1));
        acc += alpha * y[k] + beta * y[k - 1] - eta * y[k - 2];
    }
    Some(acc)
}

/// `J = ∫F dt + Σ Φ(τ, x(τ⁻), w, extra) + F0(x(end⁻))`, with the integral
/// taken by Simpson's rule on each inter-impulse segment of the mesh.
pub fn evaluate_cost(traj: &Trajectory, costs: &CostSpec) -> Result<CostBreakdown, SimError> {
    if traj.is_empty() {
        return Err(SimError::TooCoarse {
            t0: 0.0,
            t1: 0.0,
            nodes: 0,
        });
    }
    let mut buf = Vec::new();
    let mut running = 0.0;
    let mut seg_start = 0;
    let n = traj.len();
    for i in 0..n {
        let closes = i + 1 == n || traj.sides[i] == Side::Minus;
        if !closes {
            continue;
        }
        let rows = seg_start..=i;
        let ts: Vec<f64> = traj.times[rows.clone()].to_vec();
        let ys = rows
            .map(|r| {
                costs
                    .running(&mut buf, traj.times[r], &traj.states[r], &traj.controls[r])
                    .map_err(eval_err(traj.times[r]))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        running += simpson(&ts, &ys).ok_or(SimError::TooCoarse {
            t0: ts[0],
            t1: *ts.last().unwrap(),
            nodes: ts.len(),
        })?;
        seg_start = i + 1;
    }
    let mut impulse = 0.0;
    for r in &traj.jumps {
        impulse += costs
            .impulse(&mut buf, r.t, &r.x_minus, &r.w, &r.extra)
            .map_err(eval_err(r.t))?;
    }
    let last = traj.states.last().unwrap();
    let terminal = costs
        .terminal(last)
        .map_err(eval_err(*traj.times.last().unwrap()))?;
    Ok(CostBreakdown {
        running,
        impulse,
        terminal,
        total: running + impulse + terminal,
    })
}
