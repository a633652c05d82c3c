//! Linear-quadratic problems with impulses: Riccati flow between impulse
//! times, jump conditions on `K` at impulse times, and the resulting gains.

mod lq;

use nalgebra::DMatrix;
use thiserror::Error;

pub use lq::{
    validate_lq, CrossTerm, Entry, EntrySpec, LqControlsSpec, LqImpulse, LqImpulseSpec, LqSpec,
    LqSystem, TimeMatrix,
};

use crate::expr::EvalError;
use crate::mesh::{interval_steps, node_time, Side};
use crate::model::HybridSystem;
use crate::sim::{ControlSignal, SimError, Trajectory};

/// Entries beyond this size are treated as a finite escape.
const ESCAPE_BOUND: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiccatiError {
    #[error("{what} is not positive definite at t = {t} (smallest eigenvalue {smallest_eigenvalue:e})")]
    NotPositiveDefinite {
        what: &'static str,
        t: f64,
        smallest_eigenvalue: f64,
    },
    #[error("Riccati solution escapes to infinity near t = {t}")]
    FiniteEscape { t: f64 },
    #[error("time {t} outside [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },
    #[error("matrix entry: {0}")]
    Eval(#[from] EvalError),
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn checked_inverse(m: &DMatrix<f64>, what: &'static str, t: f64) -> Result<DMatrix<f64>, RiccatiError> {
    let sym = symmetrize(m);
    match sym.clone().cholesky() {
        Some(ch) => Ok(ch.inverse()),
        None => Err(RiccatiError::NotPositiveDefinite {
            what,
            t,
            smallest_eigenvalue: min_eigenvalue(&sym),
        }),
    }
}

/// Matrices of the flow at one time.
struct FlowMatrices {
    p: DMatrix<f64>,
    q: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c_inv: DMatrix<f64>,
}

impl FlowMatrices {
    fn at(lq: &LqSystem, t: f64) -> Result<Self, RiccatiError> {
        Ok(FlowMatrices {
            p: lq.p.at(t)?,
            q: lq.q.at(t)?,
            a: lq.a.at(t)?,
            b: lq.b.at(t)?,
            c_inv: checked_inverse(&lq.c.at(t)?, "C", t)?,
        })
    }

    /// `-dK/ds = A + KP + PᵀK − (KQ + B) C⁻¹ (QᵀK + Bᵀ)`.
    fn neg_rate(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        let kq_b = k * &self.q + &self.b;
        &self.a + k * &self.p + self.p.transpose() * k - &kq_b * &self.c_inv * kq_b.transpose()
    }
}

/// Integrates the Riccati equation backward from `K(s1) = k_end` to `s0`
/// with RK4 on `ceil((s1 - s0)/dt)` equal steps. Returns `(s, K(s))` in
/// increasing time order.
pub fn riccati_flow(
    lq: &LqSystem,
    k_end: &DMatrix<f64>,
    s0: f64,
    s1: f64,
    dt: f64,
) -> Result<Vec<(f64, DMatrix<f64>)>, RiccatiError> {
    let m = interval_steps(s1 - s0, dt);
    let mut out = Vec::with_capacity(m + 1);
    let mut k = symmetrize(k_end);
    out.push((s1, k.clone()));
    for j in (0..m).rev() {
        let (t0, t1) = (node_time(s0, s1, m, j), node_time(s0, s1, m, j + 1));
        let h = t1 - t0;
        let tm = 0.5 * (t0 + t1);
        let end = FlowMatrices::at(lq, t1)?;
        let mid = FlowMatrices::at(lq, tm)?;
        let start = FlowMatrices::at(lq, t0)?;
        let k1 = end.neg_rate(&k);
        let k2 = mid.neg_rate(&(&k + &k1 * (0.5 * h)));
        let k3 = mid.neg_rate(&(&k + &k2 * (0.5 * h)));
        let k4 = start.neg_rate(&(&k + &k3 * h));
        k = symmetrize(&(&k + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)));
        if k.iter().any(|v| !v.is_finite() || v.abs() > ESCAPE_BOUND) {
            return Err(RiccatiError::FiniteEscape { t: t0 });
        }
        out.push((t0, k.clone()));
    }
    out.reverse();
    Ok(out)
}

/// `S = NᵀK⁺N + γ` and `R = NᵀK⁺(E+M) + βᵀ`.
fn jump_blocks(
    k_plus: &DMatrix<f64>,
    m: &DMatrix<f64>,
    n: &DMatrix<f64>,
    beta: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let e_m = DMatrix::identity(m.nrows(), m.ncols()) + m;
    let s = n.transpose() * k_plus * n + gamma;
    let r = n.transpose() * k_plus * &e_m + beta.transpose();
    (e_m, s, r)
}

/// Impulse feedback `b* = L x` minimizing the jump objective:
/// `L = −(NᵀK⁺N + γ)⁻¹ (NᵀK⁺(E+M) + βᵀ)`.
pub fn impulse_gain(
    k_plus: &DMatrix<f64>,
    m: &DMatrix<f64>,
    n: &DMatrix<f64>,
    beta: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
) -> Result<DMatrix<f64>, RiccatiError> {
    let (_, s, r) = jump_blocks(k_plus, m, n, beta, gamma);
    let s_inv = checked_inverse(&s, "N'K+N + gamma", f64::NAN)?;
    Ok(-(s_inv * r))
}

/// `K⁻ = (E+M)ᵀK⁺(E+M) + α − Rᵀ S⁻¹ R`, the matrix of
/// `min_b (x+Mx+Nb)ᵀK⁺(x+Mx+Nb) + xᵀαx + 2xᵀβb + bᵀγb`.
pub fn riccati_jump(
    k_plus: &DMatrix<f64>,
    m: &DMatrix<f64>,
    n: &DMatrix<f64>,
    alpha: &DMatrix<f64>,
    beta: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
) -> Result<DMatrix<f64>, RiccatiError> {
    let (e_m, s, r) = jump_blocks(k_plus, m, n, beta, gamma);
    let s_inv = checked_inverse(&s, "N'K+N + gamma", f64::NAN)?;
    let k = e_m.transpose() * k_plus * &e_m + alpha - r.transpose() * s_inv * r;
    Ok(symmetrize(&k))
}

/// The jump objective `(x+Mx+Nb)ᵀK⁺(x+Mx+Nb) + xᵀαx + 2xᵀβb + bᵀγb`.
pub fn jump_objective(k_plus: &DMatrix<f64>, imp: &LqImpulse, beta: &DMatrix<f64>, x: &[f64], b: &[f64]) -> f64 {
    let xv = DMatrix::from_column_slice(x.len(), 1, x);
    let bv = DMatrix::from_column_slice(b.len(), 1, b);
    let y = &xv + &imp.m * &xv + &imp.n * &bv;
    let v = y.transpose() * k_plus * &y
        + xv.transpose() * &imp.alpha * &xv
        + (xv.transpose() * beta * &bv) * 2.0
        + bv.transpose() * &imp.gamma * &bv;
    v[(0, 0)]
}

/// One flow segment between consecutive breakpoints; the first entry holds
/// `K⁺` at the left breakpoint and the last holds `K⁻` at the right one.
#[derive(Debug, Clone)]
struct Segment {
    times: Vec<f64>,
    ks: Vec<DMatrix<f64>>,
}

/// Impulse gain at one impulse time.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseGain {
    pub tau: f64,
    pub gain: DMatrix<f64>,
}

/// Piecewise `K(s)` on `[0, T]` with both one-sided limits at impulse times.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    segments: Vec<Segment>,
    pub gains: Vec<ImpulseGain>,
    pub horizon: f64,
}

impl RiccatiSolution {
    /// All stored samples in increasing time; impulse times appear twice,
    /// `Minus` before `Plus`.
    pub fn rows(&self) -> Vec<(f64, Side, &DMatrix<f64>)> {
        let mut out = Vec::new();
        let last = self.segments.len() - 1;
        for (j, seg) in self.segments.iter().enumerate() {
            for (i, (t, k)) in seg.times.iter().zip(&seg.ks).enumerate() {
                let side = if i == 0 && j > 0 {
                    Side::Plus
                } else if i + 1 == seg.times.len() && j < last {
                    Side::Minus
                } else {
                    Side::Regular
                };
                out.push((*t, side, k));
            }
        }
        out.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| (a.1 == Side::Plus).cmp(&(b.1 == Side::Plus)))
        });
        out
    }

    pub fn impulse_times(&self) -> Vec<f64> {
        self.gains.iter().map(|g| g.tau).collect()
    }

    /// `K(s)`; at an impulse time `side` selects the limit (`Regular` means
    /// `Plus`). Linear interpolation between mesh points.
    pub fn k_at(&self, s: f64, side: Side) -> Result<DMatrix<f64>, RiccatiError> {
        if !(0.0..=self.horizon).contains(&s) {
            return Err(RiccatiError::OutOfRange { t: s, horizon: self.horizon });
        }
        let mut j = self
            .segments
            .iter()
            .position(|seg| s <= *seg.times.last().unwrap())
            .unwrap_or(self.segments.len() - 1);
        let seg_end = *self.segments[j].times.last().unwrap();
        if s == seg_end && side != Side::Minus && j + 1 < self.segments.len() {
            j += 1;
        }
        let seg = &self.segments[j];
        let i = seg.times.partition_point(|&t| t <= s);
        if i == 0 {
            return Ok(seg.ks[0].clone());
        }
        if i >= seg.times.len() {
            return Ok(seg.ks.last().unwrap().clone());
        }
        let (t0, t1) = (seg.times[i - 1], seg.times[i]);
        let w = (s - t0) / (t1 - t0);
        Ok(symmetrize(&(&seg.ks[i - 1] * (1.0 - w) + &seg.ks[i] * w)))
    }

    /// `V(s, x) = xᵀK(s)x`.
    pub fn lq_value(&self, s: f64, side: Side, x: &[f64]) -> Result<f64, RiccatiError> {
        let k = self.k_at(s, side)?;
        let xv = DMatrix::from_column_slice(x.len(), 1, x);
        Ok((xv.transpose() * k * &xv)[(0, 0)])
    }

    /// Continuous feedback gain `−C⁻¹(QᵀK + Bᵀ)` at `s`, so `u = G x`.
    pub fn feedback_gain(&self, lq: &LqSystem, s: f64, side: Side) -> Result<DMatrix<f64>, RiccatiError> {
        let k = self.k_at(s, side)?;
        let q = lq.q.at(s)?;
        let b = lq.b.at(s)?;
        let c_inv = checked_inverse(&lq.c.at(s)?, "C", s)?;
        Ok(-(c_inv * (q.transpose() * k + b.transpose())))
    }

    /// Smallest eigenvalue over every stored `K`.
    pub fn min_eigenvalue(&self) -> f64 {
        self.segments
            .iter()
            .flat_map(|s| &s.ks)
            .map(min_eigenvalue)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest `|K − Kᵀ|` entry over every stored `K`.
    pub fn max_asymmetry(&self) -> f64 {
        self.segments
            .iter()
            .flat_map(|s| &s.ks)
            .map(|k| (k - k.transpose()).amax())
            .fold(0.0, f64::max)
    }
}

/// Solves backward from `K(T⁻) = A₀`, alternating [`riccati_flow`] on each
/// inter-impulse interval with [`riccati_jump`] and [`impulse_gain`] at each
/// impulse time.
pub fn solve_impulsive_riccati(lq: &LqSystem, dt: f64) -> Result<RiccatiSolution, RiccatiError> {
    let taus = lq.impulse_times();
    let bps = crate::mesh::breakpoints(0.0, lq.horizon, &taus);
    let mut segments = Vec::with_capacity(bps.len() - 1);
    let mut gains = Vec::with_capacity(taus.len());
    let mut k_end = symmetrize(&lq.a0);
    for j in (0..bps.len() - 1).rev() {
        let path = riccati_flow(lq, &k_end, bps[j], bps[j + 1], dt)?;
        let (times, ks): (Vec<f64>, Vec<DMatrix<f64>>) = path.into_iter().unzip();
        let k_plus = ks[0].clone();
        segments.push(Segment { times, ks });
        if j > 0 {
            let imp = &lq.impulses[j - 1];
            let beta = match lq.cross_term {
                CrossTerm::Full => imp.beta.clone(),
                CrossTerm::Dropped => DMatrix::zeros(imp.beta.nrows(), imp.beta.ncols()),
            };
            let located = |e: RiccatiError| match e {
                RiccatiError::NotPositiveDefinite { what, smallest_eigenvalue, .. } => {
                    RiccatiError::NotPositiveDefinite { what, t: imp.tau, smallest_eigenvalue }
                }
                other => other,
            };
            let gain = impulse_gain(&k_plus, &imp.m, &imp.n, &beta, &imp.gamma).map_err(located)?;
            k_end = riccati_jump(&k_plus, &imp.m, &imp.n, &imp.alpha, &beta, &imp.gamma).map_err(located)?;
            gains.push(ImpulseGain { tau: imp.tau, gain });
        }
    }
    segments.reverse();
    gains.reverse();
    Ok(RiccatiSolution {
        segments,
        gains,
        horizon: lq.horizon,
    })
}

/// Simulates the general form of `lq` from `(s, ξ)` under the Riccati
/// feedback `u = −C⁻¹(QᵀK + Bᵀ) x` and impulse feedback `w = L x⁻`.
pub fn simulate_closed_loop(
    lq: &LqSystem,
    sol: &RiccatiSolution,
    sys: &HybridSystem,
    s: f64,
    xi: &[f64],
    dt: f64,
) -> Result<Trajectory, SimError> {
    let apply = |g: &DMatrix<f64>, x: &[f64]| -> Vec<f64> {
        (g * DMatrix::from_column_slice(x.len(), 1, x)).iter().copied().collect()
    };
    let u = ControlSignal::feedback(|q| match sol.feedback_gain(lq, q.t, Side::Plus) {
        Ok(g) => apply(&g, q.x),
        Err(_) => vec![f64::NAN; lq.mu],
    });
    let w = ControlSignal::feedback(|q| {
        match sol.gains.iter().find(|g| (g.tau - q.t).abs() <= 1e-9 * g.tau.abs().max(1.0)) {
            Some(g) => apply(&g.gain, q.x),
            None => vec![f64::NAN; lq.mw],
        }
    });
    crate::sim::integrate(sys, &u, &w, s, xi, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ControlSet;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scalar_lq(a: f64, impulses: Vec<LqImpulse>) -> LqSystem {
        LqSystem {
            n: 1,
            mu: 1,
            mw: 1,
            p: TimeMatrix::zeros(1, 1),
            q: TimeMatrix::constant(&s(1.0)),
            a: TimeMatrix::constant(&s(a)),
            b: TimeMatrix::zeros(1, 1),
            c: TimeMatrix::constant(&s(1.0)),
            a0: s(1.0),
            impulses,
            horizon: 1.0,
            cross_term: CrossTerm::Full,
            u_set: ControlSet::none(),
            w_set: ControlSet::none(),
        }
    }

    fn unit_impulse(tau: f64) -> LqImpulse {
        LqImpulse {
            tau,
            m: s(0.0),
            n: s(1.0),
            alpha: s(0.0),
            beta: s(0.0),
            gamma: s(1.0),
        }
    }

    #[test]
    fn scalar_flow_closed_form() {
        let sol = solve_impulsive_riccati(&scalar_lq(0.0, vec![]), 1e-3).unwrap();
        for (t, _, k) in sol.rows() {
            assert!((k[(0, 0)] - 1.0 / (2.0 - t)).abs() < 1e-8);
        }
        assert!((sol.k_at(0.0, Side::Regular).unwrap()[(0, 0)] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn zero_rate_keeps_k_constant() {
        let mut lq = scalar_lq(0.0, vec![]);
        lq.q = TimeMatrix::zeros(1, 1);
        let path = riccati_flow(&lq, &s(3.0), 0.0, 1.0, 0.1).unwrap();
        assert!(path.iter().all(|(_, k)| k[(0, 0)] == 3.0));
    }

    #[test]
    fn gains_and_jumps_scalar() {
        let l = impulse_gain(&s(1.0), &s(0.0), &s(1.0), &s(0.0), &s(1.0)).unwrap();
        assert!((l[(0, 0)] + 0.5).abs() < 1e-15);
        let l = impulse_gain(&s(1.0), &s(0.0), &s(1.0), &s(0.0), &s(3.0)).unwrap();
        assert!((l[(0, 0)] + 0.25).abs() < 1e-15);
        let l = impulse_gain(&s(1.0), &s(0.0), &s(0.0), &s(0.0), &s(1.0)).unwrap();
        assert_eq!(l[(0, 0)], 0.0);
        let k = riccati_jump(&s(1.0), &s(0.0), &s(1.0), &s(0.0), &s(0.0), &s(1.0)).unwrap();
        assert!((k[(0, 0)] - 0.5).abs() < 1e-15);
        let kp = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let z = DMatrix::zeros(2, 2);
        let k = riccati_jump(&kp, &z, &z, &z, &z, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(k, kp);
        let k = riccati_jump(&kp, &z, &z, &(DMatrix::identity(2, 2) * 2.0), &z, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(k, &kp + DMatrix::identity(2, 2) * 2.0);
    }

    #[test]
    fn jump_matches_brute_force_scalar() {
        // min_b (x + b)^2 + b^2 = x^2 / 2
        let imp = unit_impulse(0.5);
        let best = (-4000..=4000)
            .map(|i| jump_objective(&s(1.0), &imp, &s(0.0), &[1.0], &[i as f64 * 1e-3]))
            .fold(f64::INFINITY, f64::min);
        assert!((best - 0.5).abs() < 1e-6);
    }

    #[test]
    fn singular_gain_reports_eigenvalue() {
        let err = impulse_gain(&s(1.0), &s(0.0), &s(0.0), &s(0.0), &s(-2.0)).unwrap_err();
        match err {
            RiccatiError::NotPositiveDefinite { smallest_eigenvalue, .. } => {
                assert_eq!(smallest_eigenvalue, -2.0)
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn one_impulse_instance_matches_tanh_solution() {
        let sol = solve_impulsive_riccati(&scalar_lq(1.0, vec![unit_impulse(0.5)]), 1e-3).unwrap();
        assert!((sol.k_at(0.75, Side::Regular).unwrap()[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((sol.k_at(0.5, Side::Plus).unwrap()[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((sol.k_at(0.5, Side::Minus).unwrap()[(0, 0)] - 0.5).abs() < 1e-12);
        let exact = (0.5f64.atanh() + 0.5).tanh();
        assert!((sol.k_at(0.0, Side::Regular).unwrap()[(0, 0)] - exact).abs() < 1e-10);
        assert!((sol.gains[0].gain[(0, 0)] + 0.5).abs() < 1e-12);
        let rows = sol.rows();
        let at_tau: Vec<Side> = rows.iter().filter(|r| r.0 == 0.5).map(|r| r.1).collect();
        assert_eq!(at_tau, vec![Side::Minus, Side::Plus]);
        assert_eq!(rows.last().unwrap().2[(0, 0)], 1.0);
    }

    #[test]
    fn closed_loop_cost_matches_quadratic_value() {
        let mut lq = scalar_lq(1.0, vec![unit_impulse(0.5)]);
        lq.u_set = ControlSet::Finite(vec![vec![0.0]]);
        lq.w_set = ControlSet::Finite(vec![vec![0.0]]);
        let sol = solve_impulsive_riccati(&lq, 1e-3).unwrap();
        let (sys, costs) = crate::model::lq_to_general(&lq).unwrap();
        let tr = simulate_closed_loop(&lq, &sol, &sys, 0.0, &[1.0], 1e-3).unwrap();
        assert_eq!(tr.jumps.len(), 1);
        assert!((tr.jumps[0].w[0] + 0.5 * tr.jumps[0].x_minus[0]).abs() < 1e-12);
        let j = crate::sim::evaluate_cost(&tr, &costs).unwrap().total;
        let v = sol.lq_value(0.0, Side::Plus, &[1.0]).unwrap();
        assert!((j - v).abs() < 1e-3 * v, "{j} vs {v}");
    }

    #[test]
    fn zero_costs_give_zero_k() {
        let mut lq = scalar_lq(0.0, vec![unit_impulse(0.5)]);
        lq.a0 = s(0.0);
        let sol = solve_impulsive_riccati(&lq, 1e-2).unwrap();
        assert!(sol.rows().iter().all(|r| r.2[(0, 0)] == 0.0));
        assert_eq!(sol.gains[0].gain[(0, 0)], 0.0);
    }

    #[test]
    fn finite_escape_is_reported() {
        // -dK/ds = -1 - K^2 with K(2) = 0 gives K(s) = -tan(2 - s)
        let mut lq = scalar_lq(-1.0, vec![]);
        lq.a0 = s(0.0);
        lq.horizon = 2.0;
        match solve_impulsive_riccati(&lq, 1e-3) {
            Err(RiccatiError::FiniteEscape { t }) => {
                assert!((t - (2.0 - std::f64::consts::FRAC_PI_2)).abs() < 1e-2, "{t}")
            }
            other => panic!("{other:?}"),
        }
        let mut lq = scalar_lq(0.0, vec![]);
        lq.c = TimeMatrix::constant(&s(-1.0));
        assert!(matches!(
            solve_impulsive_riccati(&lq, 1e-3),
            Err(RiccatiError::NotPositiveDefinite { what: "C", .. })
        ));
    }

    #[test]
    fn value_queries() {
        let mut lq = scalar_lq(0.0, vec![]);
        lq.n = 2;
        lq.q = TimeMatrix::zeros(2, 1);
        lq.p = TimeMatrix::zeros(2, 2);
        lq.a = TimeMatrix::zeros(2, 2);
        lq.b = TimeMatrix::zeros(2, 1);
        lq.a0 = DMatrix::identity(2, 2);
        let sol = solve_impulsive_riccati(&lq, 0.1).unwrap();
        assert_eq!(sol.lq_value(0.3, Side::Regular, &[1.0, 2.0]).unwrap(), 5.0);
        assert_eq!(sol.lq_value(0.3, Side::Regular, &[0.0, 0.0]).unwrap(), 0.0);
        assert!(sol.lq_value(1.5, Side::Regular, &[1.0, 0.0]).is_err());
    }
}
