//! Optimal control of hybrid systems with impulses: simulation, grid dynamic
//! programming, costate verification and impulsive Riccati equations.

pub mod export;
pub mod expr;
pub mod hjb;
pub mod mesh;
pub mod model;
pub mod pmp;
pub mod riccati;
pub mod scenario;
pub mod sim;

pub use expr::Expr;
pub use hjb::{Grid, Policy, ValueFunction, Variant};
pub use mesh::Side;
pub use model::{ControlSet, CostSpec, HybridSystem};
pub use riccati::{LqSystem, RiccatiSolution};
pub use scenario::Scenario;
pub use sim::{ControlSignal, Trajectory};
