use hdp_core::export::ExportError;
use hdp_core::expr::ParseError;
use hdp_core::hjb::HjbError;
use hdp_core::pmp::PmpError;
use hdp_core::riccati::RiccatiError;
use hdp_core::scenario::ScenarioError;
use hdp_core::sim::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Config(String),
    #[error("expression: {0}")]
    Expr(#[from] ParseError),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Threshold(String),
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Scenario(_) | CliError::Config(_) | CliError::Expr(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Threshold(_) => 4,
            CliError::Output { .. } => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Scenario(ScenarioError::Io { .. }) => "io",
            CliError::Scenario(ScenarioError::Json(_)) => "parse",
            CliError::Scenario(ScenarioError::Invalid(_)) => "validation",
            CliError::Config(_) => "config",
            CliError::Expr(_) => "expression",
            CliError::Numerical(_) => "numerical",
            CliError::Threshold(_) => "threshold",
            CliError::Output { .. } => "output",
        }
    }

    pub fn output(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Output {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::BadStart { .. } | SimError::Dimension { .. } | SimError::Control(_) | SimError::TooCoarse { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<HjbError> for CliError {
    fn from(e: HjbError) -> Self {
        match e {
            HjbError::Sim(s) => s.into(),
            HjbError::Grid(_)
            | HjbError::Dimension { .. }
            | HjbError::SurfaceSchedule
            | HjbError::EmptyControls(_)
            | HjbError::ImpulseSetNotFinite
            | HjbError::Coupling { .. } => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<RiccatiError> for CliError {
    fn from(e: RiccatiError) -> Self {
        match e {
            RiccatiError::OutOfRange { .. } => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<PmpError> for CliError {
    fn from(e: PmpError) -> Self {
        match e {
            PmpError::Hjb(h) => h.into(),
            PmpError::Dimension(_) | PmpError::MissingControls { .. } => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ExportError> for CliError {
    fn from(e: ExportError) -> Self {
        CliError::Output {
            path: String::from("<output>"),
            message: e.to_string(),
        }
    }
}
