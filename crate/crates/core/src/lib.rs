//! Nonlocal Gray-Scott reaction-diffusion on rectangles: kernels, operators,
//! time integration with a-priori monitors, and the diffusive-limit study.

pub mod error;
pub mod experiments;
pub mod grid;
pub mod integrator;
pub mod kernels;
pub mod limit;
pub mod local;
pub mod model;
pub mod operator;
pub mod presets;
pub mod snapshot;
pub mod verify;

pub use error::{NlgsError, Result};
pub use grid::{Field, Grid, GridSpec, NormKind};
pub use integrator::{
    integrate, IntegratorConfig, Monitor, OperatorPair, Scheme, SpatialOperator, State, Trajectory,
};
pub use kernels::{build_kernel_table, BoundaryMode, KernelSpec, KernelTable, RadialProfile};
pub use model::{steady_states, HomogeneousState, ModelParams, Regime};
pub use operator::NonlocalOperator;
