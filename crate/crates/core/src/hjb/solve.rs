use super::backup::{per_node, NodeResults};
use super::{
    enumerate_nonempty, eval_err, impulse_backup, impulse_backup_aftereffect, impulse_backup_parametrized,
    Grid, HjbError, ImpulsePolicy, Policy, StepPolicy, TimeSlice, ValueFunction, Variant,
};
use crate::mesh::{breakpoints, interval_steps, node_time, Side};
use crate::model::{ControlSet, CostSpec, HybridSystem, ImpulseCoupling};

fn check_inputs(sys: &HybridSystem, grid: &Grid, variant: Variant) -> Result<Vec<f64>, HjbError> {
    grid.validate().map_err(HjbError::Grid)?;
    if grid.dim() != sys.n {
        return Err(HjbError::Dimension {
            grid: grid.dim(),
            state: sys.n,
        });
    }
    let taus = sys.fixed_times().ok_or(HjbError::SurfaceSchedule)?.to_vec();
    let ok = matches!(
        (variant, sys.coupling),
        (_, ImpulseCoupling::Plain)
            | (Variant::Parametrized, ImpulseCoupling::ControlLeftLimit)
            | (Variant::Aftereffect, ImpulseCoupling::Aftereffect)
    );
    if !ok {
        return Err(HjbError::Coupling {
            variant,
            coupling: sys.coupling,
        });
    }
    if variant == Variant::Aftereffect && !sys.w_set.is_finite() {
        return Err(HjbError::ImpulseSetNotFinite);
    }
    Ok(taus)
}

/// One semi-Lagrangian step of length `delta` from the slice `later` back to
/// `t0`: `V(t0, ξ) = min_u {δ F(t0, ξ, u) + V(t0 + δ, ξ + δ f(t0, ξ, u))}`
/// for every layer.
fn pde_step(
    grid: &Grid,
    sys: &HybridSystem,
    costs: &CostSpec,
    u_cands: &[Vec<f64>],
    later: &[Vec<f64>],
    t0: f64,
    delta: f64,
) -> Result<NodeResults, HjbError> {
    per_node(grid.len(), later.len(), |sc, node, v, ix| {
        grid.node_into(node, &mut sc.x);
        sc.inc.resize(sys.n, 0.0);
        let mut clamped = 0;
        for (k, u) in u_cands.iter().enumerate() {
            sys.eval_flow(&mut sc.buf, t0, &sc.x, u, &mut sc.inc)
                .map_err(eval_err(t0))?;
            let running = costs.running(&mut sc.buf, t0, &sc.x, u).map_err(eval_err(t0))?;
            sc.y.clear();
            sc.y.extend(sc.x.iter().zip(&sc.inc).map(|(x, f)| x + delta * f));
            let loc = grid.locate(&sc.y);
            clamped += loc.clamped as u64;
            for (l, layer) in later.iter().enumerate() {
                let total = delta * running + grid.eval_at(&loc, layer);
                if total < v[l] {
                    v[l] = total;
                    ix[l] = k as u32;
                }
            }
        }
        Ok(clamped)
    })
}

/// Backward sweep for any variant.
pub fn solve(
    sys: &HybridSystem,
    costs: &CostSpec,
    grid: &Grid,
    variant: Variant,
) -> Result<(ValueFunction, Policy), HjbError> {
    let taus = check_inputs(sys, grid, variant)?;
    let u_cands = enumerate_nonempty(&sys.u_set, "continuous")?;
    let w_cands = enumerate_nonempty(&sys.w_set, "impulse")?;
    let layer_params = match variant {
        Variant::Aftereffect => w_cands.clone(),
        _ => vec![Vec::new()],
    };
    let reported_layer = match variant {
        Variant::Aftereffect if !sys.initial_b.is_empty() => ControlSet::nearest_index(&w_cands, &sys.initial_b),
        _ => 0,
    };

    let terminal = {
        let mut err = None;
        let v = grid.sample(|x| {
            costs.terminal(x).unwrap_or_else(|e| {
                err.get_or_insert(e);
                f64::NAN
            })
        });
        if let Some(e) = err {
            return Err(eval_err(sys.horizon)(e));
        }
        v
    };
    let mut cur: Vec<Vec<f64>> = vec![terminal; layer_params.len()];

    let bps = breakpoints(0.0, sys.horizon, &taus);
    let mut slices = vec![TimeSlice {
        s: sys.horizon,
        side: Side::Regular,
        layers: cur.clone(),
        per_a: Vec::new(),
        clamped: 0,
        evaluations: 0,
    }];
    let mut steps = Vec::new();
    let mut impulses = Vec::new();
    let nodes = grid.len() as u64;

    for j in (0..bps.len() - 1).rev() {
        let (a, b) = (bps[j], bps[j + 1]);
        if j + 2 < bps.len() {
            // `cur` is V⁺ at the impulse time b
            let slice = match variant {
                Variant::Basic => {
                    let r = impulse_backup(grid, &cur[0], sys, costs, b)?;
                    impulses.push(ImpulsePolicy {
                        tau: b,
                        w: vec![r.argmin],
                        a: None,
                    });
                    cur = vec![r.values];
                    (Vec::new(), r.clamped, r.evaluations)
                }
                Variant::Parametrized => {
                    let r = impulse_backup_parametrized(grid, &cur[0], sys, costs, b, &u_cands)?;
                    impulses.push(ImpulsePolicy {
                        tau: b,
                        w: r.w_argmin,
                        a: Some(r.a_argmin),
                    });
                    cur = vec![r.envelope];
                    (r.per_a, r.clamped, r.evaluations)
                }
                Variant::Aftereffect => {
                    let r = impulse_backup_aftereffect(grid, &cur, sys, costs, b)?;
                    impulses.push(ImpulsePolicy {
                        tau: b,
                        w: r.c_argmin,
                        a: None,
                    });
                    cur = r.layers;
                    (Vec::new(), r.clamped, r.evaluations)
                }
            };
            slices.push(TimeSlice {
                s: b,
                side: Side::Minus,
                layers: cur.clone(),
                per_a: slice.0,
                clamped: slice.1,
                evaluations: slice.2,
            });
        }
        let m = interval_steps(b - a, grid.dt);
        let delta = (b - a) / m as f64;
        for k in (0..m).rev() {
            let (t0, t1) = (node_time(a, b, m, k), node_time(a, b, m, k + 1));
            let r = pde_step(grid, sys, costs, &u_cands, &cur, t0, delta)?;
            cur = r.values;
            steps.push(StepPolicy { t0, t1, u: r.argmin });
            slices.push(TimeSlice {
                s: t0,
                side: if k == 0 && j > 0 { Side::Plus } else { Side::Regular },
                layers: cur.clone(),
                per_a: Vec::new(),
                clamped: r.clamped,
                evaluations: nodes * u_cands.len() as u64,
            });
        }
        log::debug!("solved interval [{a}, {b}] in {m} steps");
    }
    slices.reverse();
    steps.reverse();
    impulses.reverse();

    let vf = ValueFunction {
        grid: grid.clone(),
        variant,
        slices,
        reported_layer,
        layer_params,
        a_values: if variant == Variant::Parametrized {
            u_cands.clone()
        } else {
            Vec::new()
        },
        impulse_times: taus,
    };
    let policy = Policy {
        grid: grid.clone(),
        variant,
        u_candidates: u_cands,
        w_candidates: w_cands,
        steps,
        impulses,
    };
    Ok((vf, policy))
}

pub fn solve_basic(sys: &HybridSystem, costs: &CostSpec, grid: &Grid) -> Result<(ValueFunction, Policy), HjbError> {
    solve(sys, costs, grid, Variant::Basic)
}

pub fn solve_parametrized(
    sys: &HybridSystem,
    costs: &CostSpec,
    grid: &Grid,
) -> Result<(ValueFunction, Policy), HjbError> {
    solve(sys, costs, grid, Variant::Parametrized)
}

pub fn solve_aftereffect(
    sys: &HybridSystem,
    costs: &CostSpec,
    grid: &Grid,
) -> Result<(ValueFunction, Policy), HjbError> {
    solve(sys, costs, grid, Variant::Aftereffect)
}
