//! Shared numerical kernels: bracketed root finding, ODE integration,
//! quadrature and helpers on uniformly sampled data.

mod ode;
mod quad;
mod root;
mod sampled;

pub use ode::{integrate, integrate_until, Direction, OdeProblem, StepControl, Trajectory};
pub use quad::{quad, quad_with_breaks, QuadOptions};
pub use root::{find_root, maximize_scalar, scan_brackets, Bracket};
pub use sampled::{cumulative_uniform, interp_linear, uniform_grid};

/// Default absolute tolerance shared by the kernels.
pub const DEFAULT_ABS_TOL: f64 = 1e-10;
/// Default relative tolerance shared by the kernels.
pub const DEFAULT_REL_TOL: f64 = 1e-10;
