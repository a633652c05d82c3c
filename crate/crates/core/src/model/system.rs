use std::fmt;

use serde::{Deserialize, Serialize};

use super::controls::ControlSet;
use crate::expr::{indexed_names, EvalError, Expr};

/// Extra argument carried by the impulse map and the impulse cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpulseCoupling {
    /// `I(t, x, w)`.
    #[default]
    Plain,
    /// `I(t, x, a, w)` with `a = u(t⁻)`, variables `a1..a_mu`.
    ControlLeftLimit,
    /// `I(t, x, w, b)` with `b` the impulse control applied at the previous
    /// impulse time, variables `b1..b_mw`.
    Aftereffect,
}

/// When the state jumps.
#[derive(Debug, Clone, PartialEq)]
pub enum ImpulseSchedule {
    /// Strictly increasing times inside `(0, T)`.
    Fixed(Vec<f64>),
    /// Zero crossings of any of these expressions in `(t, x)`; simulator only.
    Surface(Vec<Expr>),
}

impl ImpulseSchedule {
    pub fn fixed_times(&self) -> Option<&[f64]> {
        match self {
            ImpulseSchedule::Fixed(ts) => Some(ts),
            ImpulseSchedule::Surface(_) => None,
        }
    }
}

/// Variable list of the flow `f` and running cost `F`: `t, x.., u..`.
pub fn flow_vars(n: usize, mu: usize) -> Vec<String> {
    let mut v = vec!["t".to_string()];
    v.extend(indexed_names("x", n));
    v.extend(indexed_names("u", mu));
    v
}

/// Variable list of the impulse map `I` and impulse cost `Φ`.
pub fn impulse_vars(n: usize, mu: usize, mw: usize, coupling: ImpulseCoupling) -> Vec<String> {
    let mut v = vec!["t".to_string()];
    v.extend(indexed_names("x", n));
    v.extend(indexed_names("w", mw));
    match coupling {
        ImpulseCoupling::Plain => {}
        ImpulseCoupling::ControlLeftLimit => v.extend(indexed_names("a", mu)),
        ImpulseCoupling::Aftereffect => v.extend(indexed_names("b", mw)),
    }
    v
}

/// Variable list of event surfaces: `t, x..`.
pub fn surface_vars(n: usize) -> Vec<String> {
    let mut v = vec!["t".to_string()];
    v.extend(indexed_names("x", n));
    v
}

/// Variable list of the terminal cost: `x..`.
pub fn terminal_vars(n: usize) -> Vec<String> {
    indexed_names("x", n)
}

/// Controlled ODE with impulses, all functions given as expressions.
#[derive(Debug, Clone)]
pub struct HybridSystem {
    pub n: usize,
    pub mu: usize,
    pub mw: usize,
    pub f: Vec<Expr>,
    pub impulse: Vec<Expr>,
    pub coupling: ImpulseCoupling,
    pub schedule: ImpulseSchedule,
    pub u_set: ControlSet,
    pub w_set: ControlSet,
    pub horizon: f64,
    /// Previous-impulse control assumed before the first impulse
    /// (aftereffect coupling only).
    pub initial_b: Vec<f64>,
}

/// Running, impulse and terminal costs.
#[derive(Debug, Clone)]
pub struct CostSpec {
    pub running: Expr,
    pub impulse: Expr,
    pub terminal: Expr,
}

fn fill(buf: &mut Vec<f64>, t: f64, parts: &[&[f64]]) {
    buf.clear();
    buf.push(t);
    for p in parts {
        buf.extend_from_slice(p);
    }
}

impl HybridSystem {
    /// Dimension of the extra impulse argument.
    pub fn extra_dim(&self) -> usize {
        match self.coupling {
            ImpulseCoupling::Plain => 0,
            ImpulseCoupling::ControlLeftLimit => self.mu,
            ImpulseCoupling::Aftereffect => self.mw,
        }
    }

    pub fn fixed_times(&self) -> Option<&[f64]> {
        self.schedule.fixed_times()
    }

    /// `out = f(t, x, u)`.
    pub fn eval_flow(
        &self,
        buf: &mut Vec<f64>,
        t: f64,
        x: &[f64],
        u: &[f64],
        out: &mut [f64],
    ) -> Result<(), EvalError> {
        fill(buf, t, &[x, u]);
        for (o, e) in out.iter_mut().zip(&self.f) {
            *o = e.eval(buf)?;
        }
        Ok(())
    }

    /// `out = I(t, x, w, extra)`.
    pub fn eval_impulse(
        &self,
        buf: &mut Vec<f64>,
        t: f64,
        x: &[f64],
        w: &[f64],
        extra: &[f64],
        out: &mut [f64],
    ) -> Result<(), EvalError> {
        fill(buf, t, &[x, w, extra]);
        for (o, e) in out.iter_mut().zip(&self.impulse) {
            *o = e.eval(buf)?;
        }
        Ok(())
    }

    /// Round-trips the system back to its textual description.
    pub fn to_spec(&self) -> SystemSpec {
        SystemSpec {
            n: self.n,
            f: self.f.iter().map(ToString::to_string).collect(),
            impulse: ImpulseSpec {
                times: self.fixed_times().map(<[f64]>::to_vec),
                surface: match &self.schedule {
                    ImpulseSchedule::Surface(es) => {
                        Some(OneOrMany::Many(es.iter().map(ToString::to_string).collect()))
                    }
                    ImpulseSchedule::Fixed(_) => None,
                },
                map: self.impulse.iter().map(ToString::to_string).collect(),
                coupling: self.coupling,
                initial_b: (self.coupling == ImpulseCoupling::Aftereffect)
                    .then(|| self.initial_b.clone()),
            },
            controls: ControlsSpec {
                u: self.u_set.clone(),
                w: self.w_set.clone(),
            },
        }
    }
}

impl CostSpec {
    pub fn running(&self, buf: &mut Vec<f64>, t: f64, x: &[f64], u: &[f64]) -> Result<f64, EvalError> {
        fill(buf, t, &[x, u]);
        self.running.eval(buf)
    }

    pub fn impulse(
        &self,
        buf: &mut Vec<f64>,
        t: f64,
        x: &[f64],
        w: &[f64],
        extra: &[f64],
    ) -> Result<f64, EvalError> {
        fill(buf, t, &[x, w, extra]);
        self.impulse.eval(buf)
    }

    pub fn terminal(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.terminal.eval(x)
    }

    pub fn to_spec(&self) -> CostsSpec {
        CostsSpec {
            running: self.running.to_string(),
            impulse: self.impulse.to_string(),
            terminal: self.terminal.to_string(),
        }
    }
}

/// One string or a list of strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    pub fn as_slice(&self) -> &[String] {
        match self {
            OneOrMany::One(s) => std::slice::from_ref(s),
            OneOrMany::Many(v) => v,
        }
    }
}

/// `system.impulse` block of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<OneOrMany>,
    #[serde(rename = "I")]
    pub map: Vec<String>,
    #[serde(default)]
    pub coupling: ImpulseCoupling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_b: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlsSpec {
    pub u: ControlSet,
    pub w: ControlSet,
}

/// `system` block of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub n: usize,
    pub f: Vec<String>,
    pub impulse: ImpulseSpec,
    pub controls: ControlsSpec,
}

/// `costs` block of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostsSpec {
    #[serde(rename = "F")]
    pub running: String,
    #[serde(rename = "Phi")]
    pub impulse: String,
    #[serde(rename = "F0")]
    pub terminal: String,
}

/// One violation found by validation, located by a scenario path.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationError {
    pub location: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Complete list of violations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationErrors(pub Vec<ValidationError>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&msgs.join("; "))
    }
}

impl std::error::Error for ValidationErrors {}

impl ValidationErrors {
    pub fn push(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.0.push(ValidationError {
            location: location.into(),
            message: message.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_result<T>(self, value: T) -> Result<T, ValidationErrors> {
        if self.0.is_empty() {
            Ok(value)
        } else {
            Err(self)
        }
    }

    /// Parses `text` over `vars`, recording a violation on failure.
    pub(crate) fn parse(&mut self, location: String, text: &str, vars: &[String]) -> Option<Expr> {
        match Expr::parse(text, vars) {
            Ok(e) => Some(e),
            Err(err) => {
                self.push(location, err.to_string());
                None
            }
        }
    }

    pub(crate) fn parse_all(
        &mut self,
        location: &str,
        texts: &[String],
        vars: &[String],
    ) -> Option<Vec<Expr>> {
        let parsed: Vec<Option<Expr>> = texts
            .iter()
            .enumerate()
            .map(|(i, s)| self.parse(format!("{location}[{i}]"), s, vars))
            .collect();
        parsed.into_iter().collect()
    }
}

/// Checks strictly increasing times inside `(0, horizon)`.
pub(crate) fn check_times(errs: &mut ValidationErrors, location: &str, times: &[f64], horizon: f64) {
    if times.windows(2).any(|w| w[1] <= w[0]) {
        errs.push(location, "times not strictly increasing");
    }
    if times.iter().any(|&t| !(t > 0.0 && t < horizon)) {
        errs.push(location, format!("times must lie strictly inside (0, {horizon})"));
    }
}

/// Parses and dimension-checks a textual system and its costs.
pub fn validate_system(
    spec: &SystemSpec,
    costs: &CostsSpec,
    horizon: f64,
) -> Result<(HybridSystem, CostSpec), ValidationErrors> {
    let mut errs = ValidationErrors::default();
    if spec.n < 1 {
        errs.push("system.n", "state dimension must be >= 1");
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        errs.push("horizon", "horizon must be positive and finite");
    }
    for (name, set) in [("u", &spec.controls.u), ("w", &spec.controls.w)] {
        if let Err(msg) = set.validate() {
            errs.push(format!("system.controls.{name}"), msg);
        }
    }
    let n = spec.n;
    let mu = spec.controls.u.dim();
    let mw = spec.controls.w.dim();
    let coupling = spec.impulse.coupling;

    if spec.f.len() != n {
        errs.push("system.f", format!("expected {n} expressions, got {}", spec.f.len()));
    }
    if spec.impulse.map.len() != n {
        errs.push(
            "system.impulse.I",
            format!("expected {n} expressions, got {}", spec.impulse.map.len()),
        );
    }

    let fv = flow_vars(n, mu);
    let iv = impulse_vars(n, mu, mw, coupling);
    let f = errs.parse_all("system.f", &spec.f, &fv);
    let impulse = errs.parse_all("system.impulse.I", &spec.impulse.map, &iv);

    let schedule = match (&spec.impulse.times, &spec.impulse.surface) {
        (Some(times), None) => {
            check_times(&mut errs, "system.impulse.times", times, horizon);
            Some(ImpulseSchedule::Fixed(times.clone()))
        }
        (None, Some(surface)) => errs
            .parse_all("system.impulse.surface", surface.as_slice(), &surface_vars(n))
            .map(ImpulseSchedule::Surface),
        (None, None) => Some(ImpulseSchedule::Fixed(Vec::new())),
        (Some(_), Some(_)) => {
            errs.push("system.impulse", "give either `times` or `surface`, not both");
            None
        }
    };

    let initial_b = match (coupling, &spec.impulse.initial_b) {
        (ImpulseCoupling::Aftereffect, Some(b)) => {
            if b.len() != mw {
                errs.push(
                    "system.impulse.initial_b",
                    format!("expected {mw} components, got {}", b.len()),
                );
            }
            b.clone()
        }
        (ImpulseCoupling::Aftereffect, None) => spec
            .controls
            .w
            .enumerate()
            .into_iter()
            .next()
            .unwrap_or_default(),
        (_, Some(_)) => {
            errs.push(
                "system.impulse.initial_b",
                "only meaningful with aftereffect coupling",
            );
            Vec::new()
        }
        (_, None) => Vec::new(),
    };

    let running = errs.parse("costs.F".into(), &costs.running, &fv);
    let impulse_cost = errs.parse("costs.Phi".into(), &costs.impulse, &iv);
    let terminal = errs.parse("costs.F0".into(), &costs.terminal, &terminal_vars(n));

    if !errs.is_empty() {
        return Err(errs);
    }
    let sys = HybridSystem {
        n,
        mu,
        mw,
        f: f.unwrap_or_default(),
        impulse: impulse.unwrap_or_default(),
        coupling,
        schedule: schedule.unwrap_or(ImpulseSchedule::Fixed(Vec::new())),
        u_set: spec.controls.u.clone(),
        w_set: spec.controls.w.clone(),
        horizon,
        initial_b,
    };
    let cost = CostSpec {
        running: running.expect("parsed"),
        impulse: impulse_cost.expect("parsed"),
        terminal: terminal.expect("parsed"),
    };
    Ok((sys, cost))
}
