//! Hybrid system types, sampled-data forms and their reduction to the
//! canonical impulsive form.

mod controls;
mod lq;
mod sampled;
mod system;

pub use controls::ControlSet;
pub use lq::lq_to_general;
pub use sampled::{
    basis_vars, interpolate, reduce_sampled_data, sampled_flow_vars, sampled_jump_vars,
    validate_sampled, InterpolationOperator, InterpolationSpec, ModelError, ReducedLayout,
    Reduction, SampledDataSpec, SampledDataSystem, SampledVariant,
};
pub(crate) use system::check_times;
pub use system::{
    flow_vars, impulse_vars, surface_vars, terminal_vars, validate_system, ControlsSpec, CostSpec,
    CostsSpec, HybridSystem, ImpulseCoupling, ImpulseSchedule, ImpulseSpec, OneOrMany, SystemSpec,
    ValidationError, ValidationErrors,
};
