use serde::{Deserialize, Serialize};

use super::families::{Constraint, Cost};
use super::sets::FeasibleSet;
use crate::error::{PdraError, Result};
use crate::vecops;

/// Smallest admissible lower bound on a coordinate carrying a log utility.
pub const LOG_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationParams {
    pub upsilon: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessBounds {
    /// Bound on ‖∇g_t‖ over the union box.
    pub b: f64,
    /// Lipschitz constant of ∇g_t over the union box.
    pub l: f64,
    /// Bound on both the diameter of each C_i and the norm of its members.
    pub r: f64,
    /// M/υ.
    pub lambda_bar: f64,
    /// Lipschitz constant of Φ.
    pub l_phi: f64,
    /// M: sup of the constraint values over the union box, clamped at 0.
    pub constraint_sup: f64,
}

/// A full problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub n_agents: usize,
    pub dim: usize,
    pub costs: Vec<Cost>,
    pub constraints: Vec<Constraint>,
    pub feasible_sets: Vec<FeasibleSet>,
    pub reg: RegularizationParams,
    pub bounds: SmoothnessBounds,
    /// Use the exact operator norm of the (constant) Jacobian for L_Φ.
    /// Only honoured for quadratic costs with linear constraints.
    pub closed_form_lipschitz: bool,
    /// Smallest agent subset the Lagrangian may be restricted to. L_Φ is
    /// computed for a restriction of this size.
    pub lipschitz_members: usize,
}

impl ProblemSpec {
    /// Builds and validates an instance. With `gamma = None` the step is
    /// set to υ/(4L_Φ²).
    pub fn new(
        costs: Vec<Cost>,
        constraints: Vec<Constraint>,
        feasible_sets: Vec<FeasibleSet>,
        upsilon: f64,
        gamma: Option<f64>,
    ) -> Result<Self> {
        let n = costs.len();
        if n == 0 {
            return Err(PdraError::Instance("at least one agent is required".into()));
        }
        if constraints.is_empty() {
            return Err(PdraError::Instance("at least one constraint is required".into()));
        }
        if feasible_sets.len() != n {
            return Err(PdraError::Dimension {
                context: "feasible sets per agent",
                expected: n,
                actual: feasible_sets.len(),
            });
        }
        let dim = feasible_sets[0].dim();
        let mut spec = ProblemSpec {
            n_agents: n,
            dim,
            costs,
            constraints,
            feasible_sets,
            reg: RegularizationParams { upsilon, gamma: gamma.unwrap_or(1.0) },
            bounds: SmoothnessBounds {
                b: 0.0,
                l: 0.0,
                r: 0.0,
                lambda_bar: 0.0,
                l_phi: 0.0,
                constraint_sup: 0.0,
            },
            closed_form_lipschitz: false,
            lipschitz_members: n,
        };
        spec.validate()?;
        spec.validate_reg()?;
        spec.refresh_bounds()?;
        match gamma {
            Some(g) => spec.reg.gamma = g,
            None => {
                let g = spec.reg.upsilon / (4.0 * spec.bounds.l_phi.powi(2));
                if !(g > 0.0 && g.is_finite()) {
                    return Err(PdraError::Config(format!(
                        "cannot derive a step size from υ={} and L_Φ={}",
                        spec.reg.upsilon, spec.bounds.l_phi
                    )));
                }
                spec.reg.gamma = g;
            }
        }
        spec.validate_reg()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        for (i, (cost, set)) in self.costs.iter().zip(&self.feasible_sets).enumerate() {
            if set.dim() != d {
                return Err(PdraError::Dimension {
                    context: "feasible set dimension",
                    expected: d,
                    actual: set.dim(),
                });
            }
            validate_agent(cost, set, d).map_err(|e| PdraError::Instance(format!("agent {i}: {e}")))?;
        }
        for (t, g) in self.constraints.iter().enumerate() {
            g.validate(d)
                .map_err(|e| PdraError::Instance(format!("constraint {t}: {e}")))?;
        }
        Ok(())
    }

    fn validate_reg(&self) -> Result<()> {
        let RegularizationParams { upsilon, gamma } = self.reg;
        if !(upsilon >= 0.0 && upsilon.is_finite()) {
            return Err(PdraError::Config(format!("υ must be finite and ≥ 0, got {upsilon}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(PdraError::Config(format!("γ must be finite and > 0, got {gamma}")));
        }
        Ok(())
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Componentwise hull of all agent boxes. Every average of feasible
    /// parameters lies inside it.
    pub fn union_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = self.feasible_sets[0].lower().to_vec();
        let mut hi = self.feasible_sets[0].upper().to_vec();
        for s in &self.feasible_sets[1..] {
            for j in 0..self.dim {
                lo[j] = lo[j].min(s.lower()[j]);
                hi[j] = hi[j].max(s.upper()[j]);
            }
        }
        (lo, hi)
    }

    pub fn is_quadratic_linear(&self) -> bool {
        self.costs.iter().all(Cost::is_quadratic) && self.constraints.iter().all(Constraint::is_linear)
    }

    /// Recomputes B, L, R, M, λ̄ and L_Φ from the current data.
    pub fn refresh_bounds(&mut self) -> Result<()> {
        let (lo, hi) = self.union_box();
        let mut b = 0.0_f64;
        let mut l = 0.0_f64;
        let mut m = 0.0_f64;
        for g in &self.constraints {
            let (gb, gl) = g.outer_smoothness(&lo, &hi);
            b = b.max(gb);
            l = l.max(gl);
            m = m.max(g.sup_over_box(&lo, &hi));
        }
        let r = self
            .feasible_sets
            .iter()
            .map(|s| s.diameter().max(s.max_norm()))
            .fold(0.0_f64, f64::max);
        let upsilon = self.reg.upsilon;
        let lambda_bar = if m == 0.0 {
            0.0
        } else if upsilon > 0.0 {
            m / upsilon
        } else {
            f64::INFINITY
        };
        self.bounds = SmoothnessBounds { b, l, r, lambda_bar, l_phi: 0.0, constraint_sup: m };
        self.bounds.l_phi = if self.closed_form_lipschitz
            && self.is_quadratic_linear()
            && self.lipschitz_members == self.n_agents
        {
            super::lagrangian::closed_form_lipschitz(self)?
        } else {
            super::lagrangian::analytic_lipschitz(self, self.lipschitz_members)
        };
        Ok(())
    }

    /// Switches L_Φ to the exact operator norm. Errors unless the costs are
    /// quadratic and the constraints linear.
    pub fn with_closed_form_lipschitz(mut self) -> Result<Self> {
        if !self.is_quadratic_linear() {
            return Err(PdraError::Config(
                "closed-form L_Φ needs quadratic costs and linear constraints".into(),
            ));
        }
        self.closed_form_lipschitz = true;
        self.refresh_bounds()?;
        Ok(self)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.reg.gamma = gamma;
        self.validate_reg()?;
        Ok(self)
    }

    /// Changes υ; λ̄ and L_Φ are recomputed, γ is kept.
    pub fn with_upsilon(mut self, upsilon: f64) -> Result<Self> {
        self.reg.upsilon = upsilon;
        self.validate_reg()?;
        self.refresh_bounds()?;
        Ok(self)
    }

    pub fn with_lipschitz_members(mut self, members: usize) -> Result<Self> {
        if members == 0 || members > self.n_agents {
            return Err(PdraError::Argument(format!(
                "restriction size {members} outside 1..={}",
                self.n_agents
            )));
        }
        self.lipschitz_members = members;
        self.refresh_bounds()?;
        Ok(self)
    }

    pub fn check_agent(&self, agent: usize) -> Result<()> {
        if agent >= self.n_agents {
            return Err(PdraError::Argument(format!(
                "agent {agent} out of range (N = {})",
                self.n_agents
            )));
        }
        Ok(())
    }
}

/// Checks one agent's cost and set. The origin must belong to the set unless
/// the cost is a log utility; coordinates with a nonzero log weight need a
/// lower bound of at least [`LOG_FLOOR`].
pub fn validate_agent(cost: &Cost, set: &FeasibleSet, dim: usize) -> std::result::Result<(), String> {
    if set.dim() != dim {
        return Err(format!("set has dimension {}, expected {dim}", set.dim()));
    }
    cost.validate(dim).map_err(|e| format!("cost: {e}"))?;
    set.validate(!matches!(cost, Cost::NegLog { .. })).map_err(|e| e.to_string())?;
    for j in log_coordinates(cost) {
        if set.lower()[j] < LOG_FLOOR {
            return Err(format!("log utility on coordinate {j} needs a lower bound ≥ {LOG_FLOOR}"));
        }
    }
    Ok(())
}

fn log_coordinates(cost: &Cost) -> Vec<usize> {
    match cost {
        Cost::NegLog { beta } => (0..beta.len()).filter(|&j| beta[j] != 0.0).collect(),
        _ => Vec::new(),
    }
}

/// The iterate z = (θ_1..θ_N, λ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalDualState {
    pub thetas: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub iter: u64,
}

impl PrimalDualState {
    pub fn new(thetas: Vec<Vec<f64>>, lambda: Vec<f64>) -> Self {
        PrimalDualState { thetas, lambda, iter: 0 }
    }

    /// θ_i = P_{C_i}(0) (the origin whenever it is feasible) and λ = 0.
    pub fn initial(spec: &ProblemSpec) -> Result<Self> {
        let zero = vec![0.0; spec.dim];
        let thetas = spec
            .feasible_sets
            .iter()
            .map(|s| s.project(&zero))
            .collect::<Result<Vec<_>>>()?;
        Ok(PrimalDualState::new(thetas, vec![0.0; spec.n_constraints()]))
    }

    /// Projects supplied initial parameters and checks shapes.
    pub fn from_thetas(spec: &ProblemSpec, thetas: Vec<Vec<f64>>, lambda: Vec<f64>) -> Result<Self> {
        if thetas.len() != spec.n_agents {
            return Err(PdraError::Dimension {
                context: "initial parameters",
                expected: spec.n_agents,
                actual: thetas.len(),
            });
        }
        if lambda.len() != spec.n_constraints() || lambda.iter().any(|&v| v < 0.0) {
            return Err(PdraError::Argument("initial λ must be a nonnegative T-vector".into()));
        }
        let thetas = thetas
            .iter()
            .zip(&spec.feasible_sets)
            .map(|(t, s)| s.project(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(PrimalDualState::new(thetas, lambda))
    }

    pub fn mean_theta(&self) -> Vec<f64> {
        vecops::mean_of(&self.thetas, self.thetas[0].len())
    }

    /// Stacked vector (θ_1, …, θ_N, λ).
    pub fn flatten(&self) -> Vec<f64> {
        let mut z: Vec<f64> = self.thetas.iter().flatten().copied().collect();
        z.extend_from_slice(&self.lambda);
        z
    }

    /// ‖z − z'‖² restricted to the agents in `members` plus λ.
    pub fn dist_sq_over(&self, other: &PrimalDualState, members: &[usize]) -> f64 {
        let mut s = vecops::dist_sq(&self.lambda, &other.lambda);
        for &i in members {
            s += vecops::dist_sq(&self.thetas[i], &other.thetas[i]);
        }
        s
    }

    pub fn dist_sq(&self, other: &PrimalDualState) -> f64 {
        let all: Vec<usize> = (0..self.thetas.len()).collect();
        self.dist_sq_over(other, &all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ProblemSpec {
        ProblemSpec::new(
            vec![Cost::Quadratic { a: vec![1.0], c: vec![10.0] }; 2],
            vec![Constraint::Linear { w: vec![1.0], b: 5.0 }],
            vec![FeasibleSet::new_box(vec![0.0], vec![10.0]).unwrap(); 2],
            0.1,
            None,
        )
        .unwrap()
    }

    #[test]
    fn bounds_of_linear_instance() {
        let s = tiny();
        assert_eq!(s.bounds.b, 1.0);
        assert_eq!(s.bounds.l, 0.0);
        assert_eq!(s.bounds.r, 10.0);
        assert_eq!(s.bounds.constraint_sup, 5.0);
        assert!((s.bounds.lambda_bar - 50.0).abs() < 1e-9);
        assert!(s.bounds.l_phi > 0.0);
        assert!((s.reg.gamma - 0.1 / (4.0 * s.bounds.l_phi.powi(2))).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_instances() {
        let sets = vec![FeasibleSet::new_box(vec![0.0], vec![1.0]).unwrap()];
        let g = vec![Constraint::Linear { w: vec![1.0], b: 0.0 }];
        assert!(ProblemSpec::new(vec![], g.clone(), vec![], 1.0, None).is_err());
        assert!(ProblemSpec::new(vec![Cost::Zero], vec![], sets.clone(), 1.0, None).is_err());
        assert!(ProblemSpec::new(vec![Cost::Zero], g.clone(), sets.clone(), 1.0, Some(-1.0)).is_err());
        let wide = vec![Constraint::Linear { w: vec![1.0, 1.0], b: 0.0 }];
        assert!(ProblemSpec::new(vec![Cost::Zero], wide, sets.clone(), 1.0, None).is_err());
        // log cost on a set reaching 0
        let lg = vec![Cost::NegLog { beta: vec![1.0] }];
        assert!(ProblemSpec::new(lg.clone(), g.clone(), sets, 1.0, None).is_err());
        let floored = vec![FeasibleSet::new_log_domain(FeasibleSet::Box {
            lower: vec![0.1],
            upper: vec![1.0],
        })
        .unwrap()];
        assert!(ProblemSpec::new(lg, g, floored, 1.0, None).is_ok());
    }

    #[test]
    fn zero_upsilon_gives_infinite_dual_bound() {
        let s = tiny().with_upsilon(0.0).unwrap();
        assert!(s.bounds.lambda_bar.is_infinite());
    }

    #[test]
    fn initial_state_projects_origin() {
        let s = tiny();
        let st = PrimalDualState::initial(&s).unwrap();
        assert_eq!(st.thetas, vec![vec![0.0]; 2]);
        assert_eq!(st.flatten(), vec![0.0, 0.0, 0.0]);
    }
}
