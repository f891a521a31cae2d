//! Problem instances, regularized Lagrangian gradients, projections and Φ.

mod families;
pub mod instance_file;
mod lagrangian;
mod sets;
mod spec;

pub use families::{Constraint, Cost};
pub use lagrangian::{
    agent_gradient, analytic_lipschitz, closed_form_lipschitz, compute_phi, dual_bound,
    estimate_lipschitz, eval_lagrangian_grad_dual, eval_lagrangian_grad_primal,
    monotonicity_constant, outer_price_vector, phi_restricted, price_vector, LIPSCHITZ_SAFETY,
};
pub(crate) use lagrangian::dual_gradient;
pub use sets::{FeasibleSet, DYKSTRA_MAX_SWEEPS, DYKSTRA_TOL, MEMBERSHIP_TOL};
pub use spec::{
    validate_agent, PrimalDualState, ProblemSpec, RegularizationParams, SmoothnessBounds, LOG_FLOOR,
};

/// Projection onto a feasible set.
pub fn project(set: &FeasibleSet, point: &[f64]) -> crate::error::Result<Vec<f64>> {
    set.project(point)
}
