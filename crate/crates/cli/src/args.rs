use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hdp_core::hjb::Variant;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "hdp", version, about = "Optimal control of systems with impulses: simulation, grid dynamic programming, costate checks and impulsive Riccati equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Output directory for CSV files and the run summary.
    #[arg(long, global = true, env = "HDP_OUT", default_value = "hdp-out")]
    pub out: PathBuf,

    /// Worker threads for the grid solver (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the scenario's open-loop simulation and evaluate its cost.
    Simulate(SimulateArgs),
    /// Solve the dynamic-programming equations on the grid.
    Solve(SolveArgs),
    /// Solve, then roll out the grid feedback from the start point.
    Synthesize(SynthesizeArgs),
    /// Integrate the costate along a closed-loop trajectory and check the extremum conditions.
    VerifyPmp(VerifyArgs),
    /// Solve the impulsive Riccati equation of an LQ scenario.
    Riccati(RiccatiArgs),
    /// Compare the grid value function with xᵀK(s)x on an LQ scenario.
    CompareLq(CompareArgs),
    /// Parse an expression and print it with its partial derivatives.
    CheckExpr(CheckExprArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StartArgs {
    /// Start state (overrides `simulation.x0`).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Start time (overrides `simulation.s`).
    #[arg(long, allow_hyphen_values = true)]
    pub s: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    pub scenario: PathBuf,
    #[command(flatten)]
    pub start: StartArgs,
    /// Integration step (overrides `simulation.dt`).
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantArg {
    Basic,
    Parametrized,
    Aftereffect,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Basic => Variant::Basic,
            VariantArg::Parametrized => Variant::Parametrized,
            VariantArg::Aftereffect => Variant::Aftereffect,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value_t = VariantArg::Basic)]
    pub variant: VariantArg,
    /// Lower grid bounds, one per state component.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub lo: Option<Vec<f64>>,
    /// Upper grid bounds.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub hi: Option<Vec<f64>>,
    /// Grid nodes per axis.
    #[arg(long, value_delimiter = ',')]
    pub nodes: Option<Vec<usize>>,
    /// Requested solver time step.
    #[arg(long = "grid-dt")]
    pub grid_dt: Option<f64>,
    /// Lattice points per axis for a box continuous-control set.
    #[arg(long)]
    pub u_samples: Option<usize>,
    /// Lattice points per axis for a box impulse-control set.
    #[arg(long)]
    pub w_samples: Option<usize>,
    /// Every n-th regular time slice is exported (impulse slices always are).
    #[arg(long, default_value_t = 1)]
    pub export_stride: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolveArgs {
    pub scenario: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub start: StartArgs,
    /// Seed for the sample points of the dynamic-programming residual check.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of residual sample points.
    #[arg(long, default_value_t = 32)]
    pub residual_samples: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthesizeArgs {
    pub scenario: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub start: StartArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlsArg {
    /// Feedback from the grid solve.
    Grid,
    /// Riccati feedback (LQ scenarios).
    Riccati,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    pub scenario: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub start: StartArgs,
    #[arg(long, value_enum, default_value_t = ControlsArg::Grid)]
    pub controls: ControlsArg,
    /// Margins below `-tol` count as violations.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Riccati step for `--controls riccati` (defaults to the grid step or 1e-3).
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RiccatiArgs {
    pub scenario: PathBuf,
    #[command(flatten)]
    pub start: StartArgs,
    /// Integration step (defaults to the scenario grid step or 1e-3).
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    pub scenario: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Largest accepted |V_grid − xᵀKx| / (1 + xᵀKx).
    #[arg(long, default_value_t = 0.02)]
    pub tol: f64,
    /// Fraction of each grid axis, centred, where the comparison is made.
    #[arg(long, default_value_t = 0.6)]
    pub interior: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CheckExprArgs {
    pub expr: String,
    /// Declared variables, in order.
    #[arg(long, value_delimiter = ',', default_value = "x1,x2,x3")]
    pub vars: Vec<String>,
    /// Point at which to evaluate the expression and its partials.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub at: Option<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn negative_bounds_parse() {
        let cli = Cli::try_parse_from(["hdp", "solve", "s.json", "--lo", "-2,-1.5", "--hi", "2,1.5"]).unwrap();
        let Command::Solve(a) = cli.command else { panic!() };
        assert_eq!(a.solver.lo, Some(vec![-2.0, -1.5]));
        assert_eq!(a.solver.variant, VariantArg::Basic);
    }
}
