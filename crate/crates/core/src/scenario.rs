//! Scenario files: one JSON document describing a problem (general, LQ or
//! sampled-data form), an optional solver grid and an optional simulation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hjb::Grid;
use crate::model::{
    lq_to_general, reduce_sampled_data, validate_sampled, validate_system, CostSpec, CostsSpec, HybridSystem,
    Reduction, SampledDataSpec, SystemSpec, ValidationErrors,
};
use crate::riccati::{validate_lq, LqSpec, LqSystem};
use crate::sim::ControlSignal;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ValidationErrors),
}

/// Open-loop control input of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalSpec {
    Constant(Vec<f64>),
    /// `values[i]` on `[times[i], times[i+1])`.
    Table { times: Vec<f64>, values: Vec<Vec<f64>> },
}

impl SignalSpec {
    fn dim(&self) -> Option<usize> {
        match self {
            SignalSpec::Constant(v) => Some(v.len()),
            SignalSpec::Table { values, .. } => values.first().map(Vec::len),
        }
    }

    pub fn to_signal(&self) -> ControlSignal<'static> {
        match self {
            SignalSpec::Constant(v) => ControlSignal::Constant(v.clone()),
            SignalSpec::Table { times, values } => ControlSignal::Table {
                times: times.clone(),
                values: values.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    /// Start time.
    #[serde(default)]
    pub s: f64,
    /// Initial state; for sampled-data scenarios only the continuous part.
    pub x0: Vec<f64>,
    pub dt: f64,
    /// Defaults to the zero control.
    #[serde(default)]
    pub u: Option<SignalSpec>,
    #[serde(default)]
    pub w: Option<SignalSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<CostsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lq: Option<LqSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampled_data: Option<SampledDataSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSpec>,
}

/// A validated scenario. `system` and `costs` are always the general
/// impulsive form, derived from the LQ or sampled-data block when present.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub system: HybridSystem,
    pub costs: CostSpec,
    pub lq: Option<LqSystem>,
    pub reduction: Option<Reduction>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let spec: ScenarioSpec = serde_json::from_str(text)?;
        Ok(Scenario::from_spec(spec)?)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Scenario::from_json(&text)
    }

    pub fn from_spec(spec: ScenarioSpec) -> Result<Scenario, ValidationErrors> {
        let mut errs = ValidationErrors::default();
        let forms = [spec.system.is_some(), spec.lq.is_some(), spec.sampled_data.is_some()];
        if forms.iter().filter(|&&b| b).count() != 1 {
            errs.push("", "exactly one of `system`, `lq` and `sampled_data` is required");
            return Err(errs);
        }
        let (system, costs, lq, reduction) = if let Some(lq_spec) = &spec.lq {
            if spec.costs.is_some() {
                errs.push("costs", "an `lq` scenario takes its costs from the matrices");
                return Err(errs);
            }
            let lq = validate_lq(lq_spec, spec.horizon)?;
            let (sys, costs) = lq_to_general(&lq)?;
            (sys, costs, Some(lq), None)
        } else {
            let Some(costs) = &spec.costs else {
                errs.push("costs", "missing `costs` block");
                return Err(errs);
            };
            if let Some(sys) = &spec.system {
                let (sys, costs) = validate_system(sys, costs, spec.horizon)?;
                (sys, costs, None, None)
            } else {
                let sd = spec.sampled_data.as_ref().expect("one form is present");
                let (sd, costs) = validate_sampled(sd, costs, spec.horizon)?;
                let red = reduce_sampled_data(&sd, &costs);
                (red.system.clone(), red.costs.clone(), None, Some(red))
            }
        };
        let state_dim = match &reduction {
            Some(r) => r.layout.y.len(),
            None => system.n,
        };
        if let Some(g) = &spec.grid {
            if let Err(e) = g.validate() {
                errs.push("grid", e);
            } else if g.dim() != system.n {
                errs.push("grid", format!("grid has {} axes but the state has {}", g.dim(), system.n));
            }
        }
        if let Some(sim) = &spec.simulation {
            if sim.x0.len() != state_dim {
                errs.push("simulation.x0", format!("expected {state_dim} entries, got {}", sim.x0.len()));
            }
            if !(sim.dt > 0.0 && sim.dt.is_finite()) {
                errs.push("simulation.dt", "step must be positive");
            }
            if !(0.0..spec.horizon).contains(&sim.s) {
                errs.push("simulation.s", "start time must lie in [0, horizon)");
            }
            for (name, sig, dim) in [("u", &sim.u, system.mu), ("w", &sim.w, system.mw)] {
                if let Some(d) = sig.as_ref().and_then(SignalSpec::dim) {
                    if d != dim {
                        errs.push(format!("simulation.{name}"), format!("expected {dim} components, got {d}"));
                    }
                }
                if let Some(SignalSpec::Table { times, values }) = sig {
                    if times.len() != values.len() || times.is_empty() {
                        errs.push(format!("simulation.{name}"), "table needs one value per time");
                    }
                }
            }
        }
        errs.into_result(())?;
        Ok(Scenario {
            spec,
            system,
            costs,
            lq,
            reduction,
        })
    }

    pub fn grid(&self) -> Option<&Grid> {
        self.spec.grid.as_ref()
    }

    pub fn simulation(&self) -> Option<&SimulationSpec> {
        self.spec.simulation.as_ref()
    }

    /// Full initial state of the general system for a given `x0` (augmented
    /// with the held discrete values for sampled-data scenarios).
    pub fn initial_state(&self, x0: &[f64]) -> Vec<f64> {
        match &self.reduction {
            Some(r) => r.initial_state(x0),
            None => x0.to_vec(),
        }
    }

    pub fn u_signal(&self) -> ControlSignal<'static> {
        self.simulation()
            .and_then(|s| s.u.as_ref())
            .map_or(ControlSignal::Constant(vec![0.0; self.system.mu]), SignalSpec::to_signal)
    }

    pub fn w_signal(&self) -> ControlSignal<'static> {
        self.simulation()
            .and_then(|s| s.w.as_ref())
            .map_or(ControlSignal::Constant(vec![0.0; self.system.mw]), SignalSpec::to_signal)
    }
}
