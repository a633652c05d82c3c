use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::expr::{EvalError, Expr};
use crate::model::{ControlSet, ValidationErrors};

/// A matrix entry in a scenario: a number or an expression in `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EntrySpec {
    Num(f64),
    Expr(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Const(f64),
    /// Expression over `[t]`.
    Expr(Expr),
}

/// Matrix whose entries may depend on time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Entry>,
}

impl TimeMatrix {
    pub fn constant(m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                entries.push(Entry::Const(m[(i, j)]));
            }
        }
        TimeMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            entries,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(&DMatrix::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn entry(&self, i: usize, j: usize) -> &Entry {
        &self.entries[i * self.cols + j]
    }

    pub fn at(&self, t: f64) -> Result<DMatrix<f64>, EvalError> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(i, j)] = match self.entry(i, j) {
                    Entry::Const(c) => *c,
                    Entry::Expr(e) => e.eval(&[t])?,
                };
            }
        }
        Ok(m)
    }

    fn from_spec(
        errs: &mut ValidationErrors,
        location: &str,
        rows: &[Vec<EntrySpec>],
        shape: (usize, usize),
    ) -> TimeMatrix {
        let (r, c) = shape;
        if rows.len() != r || rows.iter().any(|row| row.len() != c) {
            errs.push(location, format!("dimension mismatch: expected {r}x{c}"));
            return TimeMatrix::zeros(r, c);
        }
        let mut entries = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                entries.push(match e {
                    EntrySpec::Num(v) => Entry::Const(*v),
                    EntrySpec::Expr(text) => {
                        match errs.parse(format!("{location}[{i}][{j}]"), text, &["t".to_string()]) {
                            Some(e) => Entry::Expr(e),
                            None => Entry::Const(0.0),
                        }
                    }
                });
            }
        }
        TimeMatrix {
            rows: r,
            cols: c,
            entries,
        }
    }
}

fn const_matrix(
    errs: &mut ValidationErrors,
    location: &str,
    rows: &[Vec<f64>],
    shape: (usize, usize),
) -> DMatrix<f64> {
    let (r, c) = shape;
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        errs.push(location, format!("dimension mismatch: expected {r}x{c}"));
        return DMatrix::zeros(r, c);
    }
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

/// Jump data at one impulse time.
#[derive(Debug, Clone, PartialEq)]
pub struct LqImpulse {
    pub tau: f64,
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

/// How the impulse-cost cross term `2 xᵀβ b` enters the jump conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossTerm {
    /// Completed square including `β`.
    #[default]
    Full,
    /// `β` treated as zero in the gain and the jump.
    Dropped,
}

/// Linear dynamics `dx/dt = P x + Q u`, jumps `x⁺ = x⁻ + M x⁻ + N w`, and
/// quadratic costs `xᵀAx + 2xᵀBu + uᵀCu`, `xᵀαx + 2xᵀβw + wᵀγw`, `xᵀA₀x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqSystem {
    pub n: usize,
    pub mu: usize,
    pub mw: usize,
    pub p: TimeMatrix,
    pub q: TimeMatrix,
    pub a: TimeMatrix,
    pub b: TimeMatrix,
    pub c: TimeMatrix,
    pub a0: DMatrix<f64>,
    pub impulses: Vec<LqImpulse>,
    pub horizon: f64,
    pub cross_term: CrossTerm,
    pub u_set: ControlSet,
    pub w_set: ControlSet,
}

impl LqSystem {
    pub fn impulse_times(&self) -> Vec<f64> {
        self.impulses.iter().map(|i| i.tau).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqImpulseSpec {
    pub tau: f64,
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    #[serde(rename = "N")]
    pub n: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqControlsSpec {
    pub u: ControlSet,
    pub w: ControlSet,
}

/// `lq` block of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqSpec {
    pub n: usize,
    pub mu: usize,
    pub mw: usize,
    #[serde(rename = "P")]
    pub p: Vec<Vec<EntrySpec>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<EntrySpec>>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<EntrySpec>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<EntrySpec>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<EntrySpec>>,
    #[serde(rename = "A0")]
    pub a0: Vec<Vec<f64>>,
    #[serde(default)]
    pub impulses: Vec<LqImpulseSpec>,
    #[serde(default)]
    pub cross_term: CrossTerm,
    #[serde(default)]
    pub controls: Option<LqControlsSpec>,
}

fn default_box(dim: usize, samples: usize) -> ControlSet {
    ControlSet::Box {
        lo: vec![-4.0; dim],
        hi: vec![4.0; dim],
        samples: vec![samples; dim],
    }
}

fn symmetric(m: &DMatrix<f64>) -> bool {
    let scale = 1.0 + m.amax();
    (m - m.transpose()).amax() <= 1e-12 * scale
}

fn positive_definite(m: &DMatrix<f64>) -> bool {
    symmetric(m) && m.clone().cholesky().is_some()
}

/// Validates an `lq` block. Control sets default to the box `[-4, 4]` with 81
/// samples for `u` and 801 for `w` per axis.
pub fn validate_lq(spec: &LqSpec, horizon: f64) -> Result<LqSystem, ValidationErrors> {
    let mut errs = ValidationErrors::default();
    let (n, mu, mw) = (spec.n, spec.mu, spec.mw);
    if n < 1 {
        errs.push("lq.n", "state dimension must be >= 1");
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        errs.push("horizon", "horizon must be positive and finite");
    }
    let p = TimeMatrix::from_spec(&mut errs, "lq.P", &spec.p, (n, n));
    let q = TimeMatrix::from_spec(&mut errs, "lq.Q", &spec.q, (n, mu));
    let a = TimeMatrix::from_spec(&mut errs, "lq.A", &spec.a, (n, n));
    let b = TimeMatrix::from_spec(&mut errs, "lq.B", &spec.b, (n, mu));
    let c = TimeMatrix::from_spec(&mut errs, "lq.C", &spec.c, (mu, mu));
    let a0 = const_matrix(&mut errs, "lq.A0", &spec.a0, (n, n));
    if !symmetric(&a0) {
        errs.push("lq.A0", "must be symmetric");
    }
    // constant parts can be checked now; time-varying ones are checked per step
    if let Ok(a_now) = a.at(0.0) {
        if !symmetric(&a_now) {
            errs.push("lq.A", "must be symmetric");
        }
    }
    if let Ok(c_now) = c.at(0.0) {
        if mu > 0 && !positive_definite(&c_now) {
            errs.push("lq.C", "must be symmetric positive definite");
        }
    }
    let mut impulses = Vec::with_capacity(spec.impulses.len());
    for (k, imp) in spec.impulses.iter().enumerate() {
        let loc = |name: &str| format!("lq.impulses[{k}].{name}");
        let m = const_matrix(&mut errs, &loc("M"), &imp.m, (n, n));
        let nn = const_matrix(&mut errs, &loc("N"), &imp.n, (n, mw));
        let alpha = const_matrix(&mut errs, &loc("alpha"), &imp.alpha, (n, n));
        let beta = const_matrix(&mut errs, &loc("beta"), &imp.beta, (n, mw));
        let gamma = const_matrix(&mut errs, &loc("gamma"), &imp.gamma, (mw, mw));
        if !symmetric(&alpha) {
            errs.push(loc("alpha"), "must be symmetric");
        }
        if mw > 0 && !positive_definite(&gamma) {
            errs.push(loc("gamma"), "must be symmetric positive definite");
        }
        impulses.push(LqImpulse {
            tau: imp.tau,
            m,
            n: nn,
            alpha,
            beta,
            gamma,
        });
    }
    let taus: Vec<f64> = impulses.iter().map(|i| i.tau).collect();
    crate::model::check_times(&mut errs, "lq.impulses.tau", &taus, horizon);
    let (u_set, w_set) = match &spec.controls {
        Some(c) => (c.u.clone(), c.w.clone()),
        None => (default_box(mu, 81), default_box(mw, 801)),
    };
    if u_set.dim() != mu {
        errs.push("lq.controls.u", format!("expected dimension {mu}"));
    }
    if w_set.dim() != mw {
        errs.push("lq.controls.w", format!("expected dimension {mw}"));
    }
    errs.into_result(LqSystem {
        n,
        mu,
        mw,
        p,
        q,
        a,
        b,
        c,
        a0,
        impulses,
        horizon,
        cross_term: spec.cross_term,
        u_set,
        w_set,
    })
}
