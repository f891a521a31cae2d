//! Instance generators.

mod ev;
mod power;

pub use ev::{gen_ev_instance, EvInstanceParams};
pub use power::{
    balance_residual, dc_ptdf, gen_powernet_instance, load_network_data, load_network_from_branches,
    network_from_branches, read_branches, read_buses, read_limits, read_ptdf, Branch, BusRecord,
    BusRole, GenBus, LoadBus, NetworkData, PowerNetParams, DEFAULT_GEN_COEFFS,
};

use crate::error::Result;
use crate::problem::{Constraint, Cost, FeasibleSet, ProblemSpec};

/// Five charging points with f_i(θ) = (θ − 10)², three capped at 7 kW and
/// two at 10 kW, sharing θ̄ ≤ 5. υ = 1e−3 and γ = υ/(4L_Φ²).
pub fn running_example() -> ProblemSpec {
    running_example_with(1e-3, None).expect("running example is valid")
}

pub fn running_example_with(upsilon: f64, gamma: Option<f64>) -> Result<ProblemSpec> {
    let mut sets = vec![FeasibleSet::new_box(vec![0.0], vec![7.0])?; 3];
    sets.extend(vec![FeasibleSet::new_box(vec![0.0], vec![10.0])?; 2]);
    ProblemSpec::new(
        vec![Cost::Quadratic { a: vec![1.0], c: vec![10.0] }; 5],
        vec![Constraint::Linear { w: vec![1.0], b: 5.0 }],
        sets,
        upsilon,
        gamma,
    )
}

/// Regularized running-example saddle point: θ* = (5 + 20υ)/(1 + υ)² for
/// every agent and λ* = (θ* − 5)/υ.
pub fn running_example_saddle(upsilon: f64) -> (f64, f64) {
    let th = (5.0 + 20.0 * upsilon) / ((1.0 + upsilon) * (1.0 + upsilon));
    (th, (th - 5.0) / upsilon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_example_constants() {
        let s = running_example();
        assert_eq!(s.n_agents, 5);
        assert_eq!(s.bounds.b, 1.0);
        assert_eq!(s.bounds.l, 0.0);
        assert_eq!(s.bounds.r, 10.0);
    }

    #[test]
    fn closed_form_saddle_is_stationary() {
        let u = 0.1;
        let (th, lam) = running_example_saddle(u);
        assert!((2.0 * (th - 10.0) + u * th + lam).abs() < 1e-12);
        assert!((th - 5.0 - u * lam).abs() < 1e-12);
    }
}
