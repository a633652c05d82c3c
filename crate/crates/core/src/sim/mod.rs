//! Forward simulation of controlled ODEs with impulses and evaluation of the
//! cost functional along the result.

mod cost;

use thiserror::Error;

pub use cost::{evaluate_cost, simpson, CostBreakdown};

use crate::expr::EvalError;
use crate::mesh::{interval_steps, mesh_times, node_time, Side};
use crate::model::{HybridSystem, ImpulseCoupling, ImpulseSchedule};

/// Bisection tolerance in `t` for event surfaces.
pub const EVENT_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("state is not finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("event bisection failed on [{t0}, {t1}]")]
    EventBisection { t0: f64, t1: f64 },
    #[error("evaluation failed at t = {t}: {source}")]
    Eval {
        t: f64,
        #[source]
        source: EvalError,
    },
    #[error("start time {s} outside [0, {end})")]
    BadStart { s: f64, end: f64 },
    #[error("start state has {got} components, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("control signal: {0}")]
    Control(String),
    #[error("segment [{t0}, {t1}] has {nodes} nodes; Simpson's rule needs at least 3")]
    TooCoarse { t0: f64, t1: f64, nodes: usize },
}

fn eval_err(t: f64) -> impl Fn(EvalError) -> SimError {
    move |source| SimError::Eval { t, source }
}

/// What a feedback control sees when it is queried.
#[derive(Debug, Clone, Copy)]
pub struct FeedbackQuery<'q> {
    pub t: f64,
    /// End of the integrator step about to be taken (equal to `t` for
    /// impulse controls).
    pub step_end: f64,
    pub x: &'q [f64],
    /// Extra impulse argument (`a` or `b`), empty for continuous controls.
    pub extra: &'q [f64],
    /// Impulse control applied at the most recent impulse. Before the first
    /// impulse this is the declared initial value, empty unless aftereffect.
    pub last_impulse: &'q [f64],
}

pub type FeedbackFn<'a> = dyn Fn(&FeedbackQuery) -> Vec<f64> + Send + Sync + 'a;

/// Source of control values for a simulation.
pub enum ControlSignal<'a> {
    Constant(Vec<f64>),
    /// `values[i]` applies on `[times[i], times[i+1])`; the last value holds
    /// to the end.
    Table {
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
    Feedback(Box<FeedbackFn<'a>>),
}

impl<'a> ControlSignal<'a> {
    pub fn feedback(f: impl Fn(&FeedbackQuery) -> Vec<f64> + Send + Sync + 'a) -> Self {
        ControlSignal::Feedback(Box::new(f))
    }

    fn check(&self, dim: usize, start: f64) -> Result<(), SimError> {
        match self {
            ControlSignal::Constant(v) if v.len() != dim => Err(SimError::Control(format!(
                "constant control has {} components, expected {dim}",
                v.len()
            ))),
            ControlSignal::Table { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(SimError::Control("table needs matching, non-empty times and values".into()));
                }
                if times[0] > start {
                    return Err(SimError::Control(format!("table starts at {} after {start}", times[0])));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(SimError::Control("table times not strictly increasing".into()));
                }
                if values.iter().any(|v| v.len() != dim) {
                    return Err(SimError::Control(format!("table values must have {dim} components")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, q: &FeedbackQuery) -> Vec<f64> {
        match self {
            ControlSignal::Constant(v) => v.clone(),
            ControlSignal::Table { times, values } => {
                let i = times.partition_point(|&s| s <= q.t).max(1) - 1;
                values[i].clone()
            }
            ControlSignal::Feedback(f) => f(q),
        }
    }
}

/// One applied impulse.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord {
    pub t: f64,
    /// Row of the `Minus` entry; the `Plus` entry follows it.
    pub row: usize,
    pub x_minus: Vec<f64>,
    pub x_plus: Vec<f64>,
    pub w: Vec<f64>,
    /// Extra impulse argument used (`a` or `b`), empty for plain coupling.
    pub extra: Vec<f64>,
}

/// Sampled state path with both one-sided limits at impulse times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n: usize,
    pub mu: usize,
    pub times: Vec<f64>,
    pub sides: Vec<Side>,
    pub states: Vec<Vec<f64>>,
    /// Control applied on the step starting at each row; `Minus` rows and the
    /// final row carry the control of the step that ends there.
    pub controls: Vec<Vec<f64>>,
    pub jumps: Vec<JumpRecord>,
}

impl Trajectory {
    pub fn new(n: usize, mu: usize) -> Self {
        Trajectory {
            n,
            mu,
            times: Vec::new(),
            sides: Vec::new(),
            states: Vec::new(),
            controls: Vec::new(),
            jumps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn push(&mut self, t: f64, side: Side, x: &[f64], u: &[f64]) {
        self.times.push(t);
        self.sides.push(side);
        self.states.push(x.to_vec());
        self.controls.push(u.to_vec());
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    /// Largest `|x⁺ − x⁻ − I(τ, x⁻, w, extra)|` over the jump records.
    pub fn reconstruction_error(&self, sys: &HybridSystem) -> Result<f64, SimError> {
        let mut buf = Vec::new();
        let mut jump = vec![0.0; sys.n];
        let mut worst: f64 = 0.0;
        for r in &self.jumps {
            sys.eval_impulse(&mut buf, r.t, &r.x_minus, &r.w, &r.extra, &mut jump)
                .map_err(eval_err(r.t))?;
            for i in 0..sys.n {
                worst = worst.max((r.x_plus[i] - r.x_minus[i] - jump[i]).abs());
            }
        }
        Ok(worst)
    }
}

/// One classical RK4 step of `dx/dt = f(t, x, u)` with `u` held.
pub fn rk4_step(
    sys: &HybridSystem,
    buf: &mut Vec<f64>,
    t: f64,
    h: f64,
    x: &[f64],
    u: &[f64],
    out: &mut [f64],
) -> Result<(), EvalError> {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    sys.eval_flow(buf, t, x, u, &mut k1)?;
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    sys.eval_flow(buf, t + 0.5 * h, &tmp, u, &mut k2)?;
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    sys.eval_flow(buf, t + 0.5 * h, &tmp, u, &mut k3)?;
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    sys.eval_flow(buf, t + h, &tmp, u, &mut k4)?;
    for i in 0..n {
        out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

struct Runner<'s, 'c> {
    sys: &'s HybridSystem,
    u: &'s ControlSignal<'c>,
    w: &'s ControlSignal<'c>,
    buf: Vec<f64>,
    traj: Trajectory,
    /// Continuous control of the last completed step.
    last_u: Vec<f64>,
    /// Impulse control of the last impulse (aftereffect coupling).
    last_w: Vec<f64>,
}

impl Runner<'_, '_> {
    fn control_at(&self, t: f64, step_end: f64, x: &[f64]) -> Result<Vec<f64>, SimError> {
        let u = self.u.value(&FeedbackQuery {
            t,
            step_end,
            x,
            extra: &[],
            last_impulse: &self.last_w,
        });
        if u.len() != self.sys.mu {
            return Err(SimError::Control(format!(
                "continuous control has {} components at t = {t}, expected {}",
                u.len(),
                self.sys.mu
            )));
        }
        Ok(u)
    }

    fn step(&mut self, t0: f64, t1: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>, SimError> {
        let mut out = vec![0.0; x.len()];
        rk4_step(self.sys, &mut self.buf, t0, t1 - t0, x, u, &mut out).map_err(eval_err(t0))?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { t: t1 });
        }
        Ok(out)
    }

    /// Records `x⁻` at `t`, applies the jump, records `x⁺`; returns `x⁺`.
    fn jump(&mut self, t: f64, x_minus: Vec<f64>) -> Result<Vec<f64>, SimError> {
        let extra = match self.sys.coupling {
            ImpulseCoupling::Plain => Vec::new(),
            ImpulseCoupling::ControlLeftLimit => self.last_u.clone(),
            ImpulseCoupling::Aftereffect => self.last_w.clone(),
        };
        let w = self.w.value(&FeedbackQuery {
            t,
            step_end: t,
            x: &x_minus,
            extra: &extra,
            last_impulse: &self.last_w,
        });
        if w.len() != self.sys.mw {
            return Err(SimError::Control(format!(
                "impulse control has {} components at t = {t}, expected {}",
                w.len(),
                self.sys.mw
            )));
        }
        let mut inc = vec![0.0; self.sys.n];
        self.sys
            .eval_impulse(&mut self.buf, t, &x_minus, &w, &extra, &mut inc)
            .map_err(eval_err(t))?;
        let x_plus: Vec<f64> = x_minus.iter().zip(&inc).map(|(a, b)| a + b).collect();
        if x_plus.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { t });
        }
        let row = self.traj.len();
        let last_u = self.last_u.clone();
        self.traj.push(t, Side::Minus, &x_minus, &last_u);
        self.traj.push(t, Side::Plus, &x_plus, &[]);
        self.traj.jumps.push(JumpRecord {
            t,
            row,
            x_minus,
            x_plus: x_plus.clone(),
            w: w.clone(),
            extra,
        });
        self.last_w = w;
        Ok(x_plus)
    }

    /// Sets the control of the most recent row (the start of the next step).
    fn set_row_control(&mut self, u: &[f64]) {
        if let Some(last) = self.traj.controls.last_mut() {
            *last = u.to_vec();
        }
    }

    fn finish(mut self) -> Trajectory {
        let last_u = self.last_u.clone();
        self.set_row_control(&last_u);
        self.traj
    }

    fn run_fixed(&mut self, taus: &[f64], s: f64, end: f64, dt: f64, xi: &[f64]) -> Result<(), SimError> {
        let bps = crate::mesh::breakpoints(s, end, taus);
        let mut x = xi.to_vec();
        self.traj.push(s, Side::Regular, &x, &[]);
        for (seg, win) in bps.windows(2).enumerate() {
            if seg > 0 {
                x = self.jump(win[0], x)?;
            }
            let m = interval_steps(win[1] - win[0], dt);
            for j in 0..m {
                let (t0, t1) = (node_time(win[0], win[1], m, j), node_time(win[0], win[1], m, j + 1));
                let u = self.control_at(t0, t1, &x)?;
                self.set_row_control(&u);
                x = self.step(t0, t1, &x, &u)?;
                self.last_u = u;
                if j + 1 < m || seg + 2 == bps.len() {
                    self.traj.push(t1, Side::Regular, &x, &[]);
                }
            }
        }
        Ok(())
    }

    fn surface_values(&mut self, surfaces: &[crate::expr::Expr], t: f64, x: &[f64]) -> Result<Vec<f64>, SimError> {
        self.buf.clear();
        self.buf.push(t);
        self.buf.extend_from_slice(x);
        surfaces
            .iter()
            .map(|g| g.eval(&self.buf).map_err(eval_err(t)))
            .collect()
    }

    fn crossed(g0: f64, g1: f64) -> bool {
        g0 != 0.0 && (g1 == 0.0 || (g0 < 0.0) != (g1 < 0.0))
    }

    /// Time in `(t0, t1]` where surface `k` changes sign along the RK4 step
    /// from `x0`, found by bisection; returns the time and the state there.
    fn bisect(
        &mut self,
        surfaces: &[crate::expr::Expr],
        k: usize,
        t0: f64,
        t1: f64,
        x0: &[f64],
        u: &[f64],
    ) -> Result<(f64, Vec<f64>), SimError> {
        let g0 = self.surface_values(surfaces, t0, x0)?[k];
        let (mut lo, mut hi) = (t0, t1);
        for _ in 0..200 {
            if hi - lo <= EVENT_TOL {
                let x = self.step(t0, hi, x0, u)?;
                return Ok((hi, x));
            }
            let mid = 0.5 * (lo + hi);
            let xm = self.step(t0, mid, x0, u)?;
            let gm = self.surface_values(surfaces, mid, &xm)?[k];
            if Self::crossed(g0, gm) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Err(SimError::EventBisection { t0, t1 })
    }

    fn run_surface(
        &mut self,
        surfaces: &[crate::expr::Expr],
        s: f64,
        end: f64,
        dt: f64,
        xi: &[f64],
    ) -> Result<(), SimError> {
        let mut x = xi.to_vec();
        let mut start = s;
        let mut last_event: Option<f64> = None;
        self.traj.push(s, Side::Regular, &x, &[]);
        'segments: loop {
            let m = interval_steps(end - start, dt);
            for j in 0..m {
                let (t0, t1) = (node_time(start, end, m, j), node_time(start, end, m, j + 1));
                let u = self.control_at(t0, t1, &x)?;
                self.set_row_control(&u);
                let x1 = self.step(t0, t1, &x, &u)?;
                let g0 = self.surface_values(surfaces, t0, &x)?;
                let g1 = self.surface_values(surfaces, t1, &x1)?;
                let mut event: Option<(f64, Vec<f64>)> = None;
                for k in 0..surfaces.len() {
                    if Self::crossed(g0[k], g1[k]) {
                        let (te, xe) = self.bisect(surfaces, k, t0, t1, &x, &u)?;
                        // the bisection lands just past the surface; leaving it again
                        // right after the jump is not a new crossing
                        if last_event.is_some_and(|tl| te <= tl + 10.0 * EVENT_TOL) {
                            continue;
                        }
                        // earliest crossing wins; declaration order breaks ties
                        if event.as_ref().map_or(true, |(tb, _)| te < *tb) {
                            event = Some((te, xe));
                        }
                    }
                }
                self.last_u = u;
                match event {
                    Some((te, xe)) if te < end - EVENT_TOL => {
                        x = self.jump(te, xe)?;
                        start = te;
                        last_event = Some(te);
                        continue 'segments;
                    }
                    _ => {
                        x = x1;
                        self.traj.push(t1, Side::Regular, &x, &[]);
                    }
                }
            }
            return Ok(());
        }
    }
}

/// Simulates from `x(s⁺) = xi` to `T` with RK4 steps of at most `dt`,
/// aligned so that fixed impulse times are mesh nodes.
pub fn integrate(
    sys: &HybridSystem,
    u: &ControlSignal,
    w: &ControlSignal,
    s: f64,
    xi: &[f64],
    dt: f64,
) -> Result<Trajectory, SimError> {
    integrate_until(sys, u, w, s, xi, sys.horizon, dt)
}

/// [`integrate`] stopping at `end ≤ T`; impulses at `end` are not applied.
pub fn integrate_until(
    sys: &HybridSystem,
    u: &ControlSignal,
    w: &ControlSignal,
    s: f64,
    xi: &[f64],
    end: f64,
    dt: f64,
) -> Result<Trajectory, SimError> {
    if !(s >= 0.0 && s < end && end <= sys.horizon) {
        return Err(SimError::BadStart { s, end });
    }
    if xi.len() != sys.n {
        return Err(SimError::Dimension {
            expected: sys.n,
            got: xi.len(),
        });
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite { t: s });
    }
    u.check(sys.mu, s)?;
    w.check(sys.mw, s)?;
    let mut runner = Runner {
        sys,
        u,
        w,
        buf: Vec::new(),
        traj: Trajectory::new(sys.n, sys.mu),
        last_u: vec![0.0; sys.mu],
        last_w: sys.initial_b.clone(),
    };
    match &sys.schedule {
        ImpulseSchedule::Fixed(taus) => runner.run_fixed(taus, s, end, dt, xi)?,
        ImpulseSchedule::Surface(gs) => runner.run_surface(gs, s, end, dt, xi)?,
    }
    Ok(runner.finish())
}

/// Node times of the fixed-schedule mesh used by [`integrate`].
pub fn simulation_mesh(sys: &HybridSystem, s: f64, dt: f64) -> Vec<f64> {
    mesh_times(s, sys.horizon, sys.fixed_times().unwrap_or(&[]), dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_system, ControlSet, ControlsSpec, CostsSpec, ImpulseSpec, OneOrMany, SystemSpec};

    pub(crate) fn system(f: &str, map: &str, times: Option<Vec<f64>>, surface: Option<&str>, horizon: f64) -> HybridSystem {
        let spec = SystemSpec {
            n: 1,
            f: vec![f.into()],
            impulse: ImpulseSpec {
                times,
                surface: surface.map(|s| OneOrMany::One(s.into())),
                map: vec![map.into()],
                coupling: ImpulseCoupling::Plain,
                initial_b: None,
            },
            controls: ControlsSpec {
                u: ControlSet::Finite(vec![vec![0.0]]),
                w: ControlSet::Finite(vec![vec![0.0]]),
            },
        };
        let costs = CostsSpec {
            running: "0".into(),
            impulse: "0".into(),
            terminal: "0".into(),
        };
        validate_system(&spec, &costs, horizon).unwrap().0
    }

    fn zero() -> ControlSignal<'static> {
        ControlSignal::Constant(vec![0.0])
    }

    #[test]
    fn pure_jump() {
        let sys = system("0", "1", Some(vec![0.5]), None, 1.0);
        let tr = integrate(&sys, &zero(), &zero(), 0.0, &[0.0], 0.1).unwrap();
        assert_eq!(tr.final_state().unwrap(), &[1.0]);
        assert_eq!(tr.jumps.len(), 1);
        let j = &tr.jumps[0];
        assert_eq!((j.t, j.x_minus[0], j.x_plus[0]), (0.5, 0.0, 1.0));
        assert_eq!(tr.sides[j.row], Side::Minus);
        assert_eq!(tr.sides[j.row + 1], Side::Plus);
        assert_eq!(tr.times.iter().filter(|&&t| t == 0.5).count(), 2);
        assert!(tr.times.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(tr.reconstruction_error(&sys).unwrap(), 0.0);
    }

    #[test]
    fn exponential_growth() {
        let sys = system("x1", "0", None, None, 1.0);
        let tr = integrate(&sys, &zero(), &zero(), 0.0, &[1.0], 1e-3).unwrap();
        assert!((tr.final_state().unwrap()[0] - std::f64::consts::E).abs() < 1e-8);
        assert_eq!(tr.len(), 1001);
    }

    #[test]
    fn surface_event_located() {
        let sys = system("1", "-1", None, Some("x1 - 1"), 2.0);
        let tr = integrate(&sys, &zero(), &zero(), 0.0, &[0.0], 0.013).unwrap();
        assert_eq!(tr.jumps.len(), 1);
        assert!((tr.jumps[0].t - 1.0).abs() <= 1e-9, "{}", tr.jumps[0].t);
        assert!((tr.final_state().unwrap()[0] - 1.0).abs() < 1e-9);
        assert_eq!(*tr.times.last().unwrap(), 2.0);
    }

    #[test]
    fn reflection_does_not_retrigger() {
        // elastic bounce on x1 = 0.2 from height 1 under unit gravity
        let spec = SystemSpec {
            n: 2,
            f: vec!["x2".into(), "-1".into()],
            impulse: ImpulseSpec {
                times: None,
                surface: Some(OneOrMany::One("x1 - 0.2".into())),
                map: vec!["0".into(), "-2*x2".into()],
                coupling: ImpulseCoupling::Plain,
                initial_b: None,
            },
            controls: ControlsSpec {
                u: ControlSet::Finite(vec![vec![0.0]]),
                w: ControlSet::Finite(vec![vec![0.0]]),
            },
        };
        let costs = CostsSpec {
            running: "0".into(),
            impulse: "0".into(),
            terminal: "0".into(),
        };
        let sys = validate_system(&spec, &costs, 5.0).unwrap().0;
        let tr = integrate(&sys, &zero(), &zero(), 0.0, &[1.0, 0.0], 1e-3).unwrap();
        let first = 1.6f64.sqrt();
        assert_eq!(tr.jumps.len(), 2);
        assert!((tr.jumps[0].t - first).abs() <= 1e-9);
        assert!((tr.jumps[1].t - 3.0 * first).abs() <= 1e-8);
    }

    #[test]
    fn blow_up_reports_time() {
        // x' = x^2, x(0) = 1 escapes at t = 1
        let sys = system("x1^2", "0", None, None, 2.0);
        match integrate(&sys, &zero(), &zero(), 0.0, &[1.0], 1e-2) {
            Err(SimError::NonFinite { t }) => assert!(t > 0.9 && t < 1.2, "{t}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn table_control() {
        let sys = system("u1", "0", None, None, 1.0);
        let u = ControlSignal::Table {
            times: vec![0.0, 0.5],
            values: vec![vec![1.0], vec![-1.0]],
        };
        let tr = integrate(&sys, &u, &zero(), 0.0, &[0.0], 0.1).unwrap();
        assert!(tr.final_state().unwrap()[0].abs() < 1e-12);
        assert_eq!(tr.controls[0], vec![1.0]);
        assert_eq!(tr.controls[5], vec![-1.0]);
        assert_eq!(tr.controls.last().unwrap(), &vec![-1.0]);
    }

    #[test]
    fn rk4_order() {
        let sys = system("x1", "0", None, None, 1.0);
        let err = |h: f64| {
            let tr = integrate(&sys, &zero(), &zero(), 0.0, &[1.0], h).unwrap();
            (tr.final_state().unwrap()[0] - std::f64::consts::E).abs()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((12.0..=20.0).contains(&ratio), "{ratio}");
    }
}
