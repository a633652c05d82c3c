use rayon::prelude::*;

use super::{eval_err, Grid, HjbError};
use crate::model::{CostSpec, HybridSystem, ImpulseCoupling};

const CHUNK: usize = 64;

/// Per-worker evaluation buffers.
#[derive(Default)]
pub(crate) struct Scratch {
    pub buf: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub inc: Vec<f64>,
}

/// Layer-major results of a node-wise minimization.
pub(crate) struct NodeResults {
    pub values: Vec<Vec<f64>>,
    pub argmin: Vec<Vec<u32>>,
    pub clamped: u64,
}

/// Runs `f(scratch, node, values, argmins)` for every node in parallel,
/// where `values`/`argmins` hold one entry per layer. Nodes are independent,
/// so the result does not depend on the thread count.
pub(crate) fn per_node<F>(nodes: usize, layers: usize, f: F) -> Result<NodeResults, HjbError>
where
    F: Fn(&mut Scratch, usize, &mut [f64], &mut [u32]) -> Result<u64, HjbError> + Sync,
{
    let mut vals = vec![f64::INFINITY; nodes * layers];
    let mut idx = vec![0u32; nodes * layers];
    let clamped = if layers == 0 {
        0
    } else {
        vals.par_chunks_mut(CHUNK * layers)
            .zip(idx.par_chunks_mut(CHUNK * layers))
            .enumerate()
            .map(|(c, (v, ix))| {
                let mut scratch = Scratch::default();
                let mut clamped = 0u64;
                for (k, (vv, ii)) in v.chunks_mut(layers).zip(ix.chunks_mut(layers)).enumerate() {
                    clamped += f(&mut scratch, c * CHUNK + k, vv, ii)?;
                }
                Ok::<u64, HjbError>(clamped)
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))?
    };
    let values = (0..layers)
        .map(|l| (0..nodes).map(|i| vals[i * layers + l]).collect())
        .collect();
    let argmin = (0..layers)
        .map(|l| (0..nodes).map(|i| idx[i * layers + l]).collect())
        .collect();
    Ok(NodeResults {
        values,
        argmin,
        clamped,
    })
}

/// Result of a plain impulse backup.
#[derive(Debug, Clone)]
pub struct Backup {
    /// `V⁻` on the grid.
    pub values: Vec<f64>,
    /// Index of the minimizing `w` in `W`'s enumeration, per node.
    pub argmin: Vec<u32>,
    pub clamped: u64,
    pub evaluations: u64,
}

/// Result of the backup with the extra argument `a`.
#[derive(Debug, Clone)]
pub struct ParametrizedBackup {
    /// `V⁻(·, a)` for each enumerated `a`.
    pub per_a: Vec<Vec<f64>>,
    /// Minimizing `w` per `a` and node.
    pub w_argmin: Vec<Vec<u32>>,
    /// `min_a V⁻(·, a)`.
    pub envelope: Vec<f64>,
    /// Minimizing `a` per node.
    pub a_argmin: Vec<u32>,
    pub clamped: u64,
    pub evaluations: u64,
}

/// Result of the backup with the previous impulse control `b`.
#[derive(Debug, Clone)]
pub struct AftereffectBackup {
    /// `V⁻(·, b)` for each element `b` of `W`.
    pub layers: Vec<Vec<f64>>,
    /// Minimizing new control `c` per `b` and node.
    pub c_argmin: Vec<Vec<u32>>,
    pub clamped: u64,
    pub evaluations: u64,
}

/// `min_w V⁺(ξ + I(τ, ξ, w, extra)) + Φ(τ, ξ, w, extra)` at node `node`,
/// reading `V⁺` from `vplus(w index)`.
#[allow(clippy::too_many_arguments)]
fn min_over_w<'v>(
    grid: &Grid,
    sys: &HybridSystem,
    costs: &CostSpec,
    tau: f64,
    w_cands: &[Vec<f64>],
    extra: &[f64],
    vplus: impl Fn(usize) -> &'v [f64],
    sc: &mut Scratch,
    node: usize,
) -> Result<(f64, u32, u64), HjbError> {
    grid.node_into(node, &mut sc.x);
    sc.inc.resize(sys.n, 0.0);
    let mut best = f64::INFINITY;
    let mut arg = 0u32;
    let mut clamped = 0;
    for (c, w) in w_cands.iter().enumerate() {
        sys.eval_impulse(&mut sc.buf, tau, &sc.x, w, extra, &mut sc.inc)
            .map_err(eval_err(tau))?;
        sc.y.clear();
        sc.y.extend(sc.x.iter().zip(&sc.inc).map(|(a, b)| a + b));
        let (v, cl) = grid.interpolate(vplus(c), &sc.y);
        clamped += cl as u64;
        let total = v + costs
            .impulse(&mut sc.buf, tau, &sc.x, w, extra)
            .map_err(eval_err(tau))?;
        if total < best {
            best = total;
            arg = c as u32;
        }
    }
    Ok((best, arg, clamped))
}

fn no_extra(sys: &HybridSystem, value: &[f64]) -> Vec<f64> {
    if sys.coupling == ImpulseCoupling::Plain {
        Vec::new()
    } else {
        value.to_vec()
    }
}

/// `V⁻(ξ) = min_w {V⁺(ξ + I(τ, ξ, w)) + Φ(τ, ξ, w)}` node by node; ties go
/// to the first enumerated `w`.
pub fn impulse_backup(
    grid: &Grid,
    vplus: &[f64],
    sys: &HybridSystem,
    costs: &CostSpec,
    tau: f64,
) -> Result<Backup, HjbError> {
    let w_cands = super::enumerate_nonempty(&sys.w_set, "impulse")?;
    let res = per_node(grid.len(), 1, |sc, node, v, ix| {
        let (best, arg, cl) = min_over_w(grid, sys, costs, tau, &w_cands, &[], |_| vplus, sc, node)?;
        v[0] = best;
        ix[0] = arg;
        Ok(cl)
    })?;
    let NodeResults {
        mut values,
        mut argmin,
        clamped,
    } = res;
    Ok(Backup {
        values: values.pop().unwrap(),
        argmin: argmin.pop().unwrap(),
        clamped,
        evaluations: (grid.len() * w_cands.len()) as u64,
    })
}

/// Backup with impulse map and cost depending on `a`, for each `a` in
/// `a_values`, plus the envelope over `a`.
pub fn impulse_backup_parametrized(
    grid: &Grid,
    vplus: &[f64],
    sys: &HybridSystem,
    costs: &CostSpec,
    tau: f64,
    a_values: &[Vec<f64>],
) -> Result<ParametrizedBackup, HjbError> {
    let w_cands = super::enumerate_nonempty(&sys.w_set, "impulse")?;
    if a_values.is_empty() {
        return Err(HjbError::EmptyControls("continuous"));
    }
    let extras: Vec<Vec<f64>> = a_values.iter().map(|a| no_extra(sys, a)).collect();
    let res = per_node(grid.len(), a_values.len(), |sc, node, v, ix| {
        let mut clamped = 0;
        for (l, extra) in extras.iter().enumerate() {
            let (best, arg, cl) = min_over_w(grid, sys, costs, tau, &w_cands, extra, |_| vplus, sc, node)?;
            v[l] = best;
            ix[l] = arg;
            clamped += cl;
        }
        Ok(clamped)
    })?;
    let nodes = grid.len();
    let mut envelope = vec![f64::INFINITY; nodes];
    let mut a_argmin = vec![0u32; nodes];
    for (l, layer) in res.values.iter().enumerate() {
        for i in 0..nodes {
            if layer[i] < envelope[i] {
                envelope[i] = layer[i];
                a_argmin[i] = l as u32;
            }
        }
    }
    Ok(ParametrizedBackup {
        per_a: res.values,
        w_argmin: res.argmin,
        envelope,
        a_argmin,
        clamped: res.clamped,
        evaluations: (nodes * w_cands.len() * a_values.len()) as u64,
    })
}

/// `V⁻(ξ, b) = min_c {V⁺(ξ + I(τ, ξ, c, b), c) + Φ(τ, ξ, c, b)}` where
/// `vplus[c]` is the layer of the `c`-th element of `W`.
pub fn impulse_backup_aftereffect(
    grid: &Grid,
    vplus: &[Vec<f64>],
    sys: &HybridSystem,
    costs: &CostSpec,
    tau: f64,
) -> Result<AftereffectBackup, HjbError> {
    if !sys.w_set.is_finite() {
        return Err(HjbError::ImpulseSetNotFinite);
    }
    let w_cands = super::enumerate_nonempty(&sys.w_set, "impulse")?;
    if vplus.len() != w_cands.len() {
        return Err(HjbError::Grid(format!(
            "expected {} value layers, got {}",
            w_cands.len(),
            vplus.len()
        )));
    }
    let extras: Vec<Vec<f64>> = w_cands.iter().map(|b| no_extra(sys, b)).collect();
    let res = per_node(grid.len(), w_cands.len(), |sc, node, v, ix| {
        let mut clamped = 0;
        for (l, extra) in extras.iter().enumerate() {
            let (best, arg, cl) =
                min_over_w(grid, sys, costs, tau, &w_cands, extra, |c| &vplus[c], sc, node)?;
            v[l] = best;
            ix[l] = arg;
            clamped += cl;
        }
        Ok(clamped)
    })?;
    let n = w_cands.len();
    Ok(AftereffectBackup {
        layers: res.values,
        c_argmin: res.argmin,
        clamped: res.clamped,
        evaluations: (grid.len() * n * n) as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_system, ControlSet, ControlsSpec, CostsSpec, ImpulseSpec, SystemSpec};

    fn setup(map: &str, phi: &str, w: Vec<f64>, coupling: ImpulseCoupling, u: Vec<f64>) -> (Grid, HybridSystem, CostSpec) {
        let spec = SystemSpec {
            n: 1,
            f: vec!["0".into()],
            impulse: ImpulseSpec {
                times: Some(vec![0.5]),
                surface: None,
                map: vec![map.into()],
                coupling,
                initial_b: None,
            },
            controls: ControlsSpec {
                u: ControlSet::Finite(u.into_iter().map(|v| vec![v]).collect()),
                w: ControlSet::Finite(w.into_iter().map(|v| vec![v]).collect()),
            },
        };
        let costs = CostsSpec {
            running: "0".into(),
            impulse: phi.into(),
            terminal: "0".into(),
        };
        let (sys, costs) = validate_system(&spec, &costs, 1.0).unwrap();
        let grid = Grid {
            lo: vec![-4.0],
            hi: vec![4.0],
            nodes: vec![9],
            dt: 0.1,
        };
        (grid, sys, costs)
    }

    fn at(grid: &Grid, x: f64) -> usize {
        grid.nearest(&[x])
    }

    #[test]
    fn enumerated_minimum_and_first_tie() {
        let (grid, sys, costs) = setup("w1", "w1^2", vec![-1.0, 0.0, 1.0], ImpulseCoupling::Plain, vec![0.0]);
        let vplus = grid.sample(|x| x[0] * x[0]);
        let b = impulse_backup(&grid, &vplus, &sys, &costs, 0.5).unwrap();
        let i = at(&grid, 1.0);
        assert_eq!(b.values[i], 1.0);
        assert_eq!(b.argmin[i], 0);
    }

    #[test]
    fn identity_jump_is_exact() {
        let (grid, sys, costs) = setup("0", "0", vec![0.0, 1.0], ImpulseCoupling::Plain, vec![0.0]);
        let vplus = grid.sample(|x| (x[0] * 0.37).sin());
        let b = impulse_backup(&grid, &vplus, &sys, &costs, 0.5).unwrap();
        assert_eq!(b.values, vplus);
    }

    #[test]
    fn dominant_penalty() {
        let (grid, sys, costs) = setup("w1", "100", vec![-1.0, 0.0, 1.0], ImpulseCoupling::Plain, vec![0.0]);
        let vplus = grid.sample(|x| x[0] * x[0]);
        let b = impulse_backup(&grid, &vplus, &sys, &costs, 0.5).unwrap();
        assert_eq!(b.values[at(&grid, 1.0)], 100.0);
        let (grid, sys, costs) = setup("w1", "100*w1^2", vec![-1.0, 0.0, 1.0], ImpulseCoupling::Plain, vec![0.0]);
        let b = impulse_backup(&grid, &vplus, &sys, &costs, 0.5).unwrap();
        assert_eq!(b.values[at(&grid, 1.0)], 1.0);
        assert_eq!(b.argmin[at(&grid, 1.0)], 1);
    }

    #[test]
    fn parametrized_enumeration() {
        let (grid, sys, costs) = setup(
            "a1 + w1",
            "w1^2",
            vec![-1.0, 0.0, 1.0],
            ImpulseCoupling::ControlLeftLimit,
            vec![0.0, 1.0],
        );
        let vplus = grid.sample(|x| x[0] * x[0]);
        let a_values = sys.u_set.enumerate();
        let b = impulse_backup_parametrized(&grid, &vplus, &sys, &costs, 0.5, &a_values).unwrap();
        let i = at(&grid, 0.0);
        assert_eq!(b.per_a[1][i], 1.0);
        assert_eq!(b.per_a[0][i], 0.0);
        assert_eq!(b.envelope[i], 0.0);
        assert_eq!(b.a_argmin[i], 0);
        // a = 0 reproduces the plain backup of I = w
        let (_, plain_sys, plain_costs) = setup("w1", "w1^2", vec![-1.0, 0.0, 1.0], ImpulseCoupling::Plain, vec![0.0]);
        let plain = impulse_backup(&grid, &vplus, &plain_sys, &plain_costs, 0.5).unwrap();
        assert_eq!(b.per_a[0], plain.values);
    }

    #[test]
    fn aftereffect_enumeration() {
        let (grid, sys, costs) = setup("w1*b1", "w1", vec![0.0, 1.0], ImpulseCoupling::Aftereffect, vec![0.0]);
        let v = grid.sample(|x| x[0] * x[0]);
        let b = impulse_backup_aftereffect(&grid, &[v.clone(), v.clone()], &sys, &costs, 0.5).unwrap();
        let i = at(&grid, 1.0);
        assert_eq!(b.layers[1][i], 1.0);
        assert_eq!(b.c_argmin[1][i], 0);
        // without b-dependence every layer agrees
        let (_, sys, costs) = setup("w1", "0", vec![0.0, 1.0], ImpulseCoupling::Aftereffect, vec![0.0]);
        let b = impulse_backup_aftereffect(&grid, &[v.clone(), v.clone()], &sys, &costs, 0.5).unwrap();
        assert_eq!(b.layers[0], b.layers[1]);
        // a box W is rejected
        let mut boxed = sys.clone();
        boxed.w_set = ControlSet::Box {
            lo: vec![0.0],
            hi: vec![1.0],
            samples: vec![2],
        };
        assert!(matches!(
            impulse_backup_aftereffect(&grid, &[v.clone(), v], &boxed, &costs, 0.5),
            Err(HjbError::ImpulseSetNotFinite)
        ));
    }
}
