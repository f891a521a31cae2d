use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PdraError, Result};
use crate::problem::{Constraint, Cost, FeasibleSet, ProblemSpec, LOG_FLOOR};

/// EV charging over `horizon` slots: f_i(θ) = −Σ_j β_ij log θ_ij, per-slot
/// capacity θ̄_j ≤ ē_j, rate box and energy slab per vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvInstanceParams {
    pub n_agents: usize,
    pub horizon: usize,
    /// ē, one entry per slot.
    pub capacity: Vec<f64>,
    /// Per-agent rate bounds, applied to every slot.
    pub rate_min: Vec<f64>,
    pub rate_max: Vec<f64>,
    /// Per-agent bounds on Σ_j θ_ij.
    pub energy_min: Vec<f64>,
    pub energy_max: Vec<f64>,
    /// β per agent and slot; drawn from U[0, 1] with `seed` when absent.
    #[serde(default)]
    pub beta: Option<Vec<Vec<f64>>>,
    pub seed: u64,
    pub upsilon: f64,
    #[serde(default)]
    pub gamma: Option<f64>,
}

impl EvInstanceParams {
    /// Defaults used by the tests and presets: rates in [0.25, 2] for even
    /// agents and [0.25, 1.8] for odd ones, energy in [1, 7], capacity rising
    /// from 1.5 to 1.7 over each block of four slots, υ = 0.05.
    pub fn standard(n_agents: usize, horizon: usize, seed: u64) -> Self {
        EvInstanceParams {
            n_agents,
            horizon,
            capacity: (0..horizon).map(|j| 1.5 + 0.2 * (j % 4) as f64 / 3.0).collect(),
            rate_min: vec![0.25; n_agents],
            rate_max: (0..n_agents).map(|i| if i % 2 == 0 { 2.0 } else { 1.8 }).collect(),
            energy_min: vec![1.0; n_agents],
            energy_max: vec![7.0; n_agents],
            beta: None,
            seed,
            upsilon: 0.05,
            gamma: None,
        }
    }

    pub fn betas(&self) -> Vec<Vec<f64>> {
        match &self.beta {
            Some(b) => b.clone(),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                (0..self.n_agents)
                    .map(|_| (0..self.horizon).map(|_| rng.gen_range(0.0..=1.0)).collect())
                    .collect()
            }
        }
    }
}

pub fn gen_ev_instance(p: &EvInstanceParams) -> Result<ProblemSpec> {
    let (n, d) = (p.n_agents, p.horizon);
    if n == 0 || d == 0 {
        return Err(PdraError::Instance("EV instance needs N ≥ 1 and d ≥ 1".into()));
    }
    let per_agent = [
        ("rate_min", p.rate_min.len()),
        ("rate_max", p.rate_max.len()),
        ("energy_min", p.energy_min.len()),
        ("energy_max", p.energy_max.len()),
    ];
    for (name, len) in per_agent {
        if len != n {
            return Err(PdraError::Instance(format!("{name} has {len} entries, expected {n}")));
        }
    }
    if p.capacity.len() != d {
        return Err(PdraError::Dimension { context: "EV capacity", expected: d, actual: p.capacity.len() });
    }
    let betas = p.betas();
    if betas.len() != n || betas.iter().any(|b| b.len() != d) {
        return Err(PdraError::Instance(format!("β must be {n}×{d}")));
    }
    let mut costs = Vec::with_capacity(n);
    let mut sets = Vec::with_capacity(n);
    for i in 0..n {
        let lo = p.rate_min[i].max(LOG_FLOOR);
        let hi = p.rate_max[i];
        if !(lo <= hi) {
            return Err(PdraError::Instance(format!("agent {i}: empty rate box [{lo}, {hi}]")));
        }
        let (emin, emax) = (p.energy_min[i], p.energy_max[i]);
        if !(emin <= emax) || emin > hi * d as f64 || emax < lo * d as f64 {
            return Err(PdraError::Instance(format!(
                "agent {i}: energy slab [{emin}, {emax}] does not meet the rate box"
            )));
        }
        sets.push(FeasibleSet::new_log_domain(FeasibleSet::BoxWithSumSlab {
            lower: vec![lo; d],
            upper: vec![hi; d],
            sum_min: emin,
            sum_max: emax,
        })?);
        costs.push(Cost::NegLog { beta: betas[i].clone() });
    }
    let constraints = (0..d)
        .map(|j| {
            let mut w = vec![0.0; d];
            w[j] = 1.0;
            Constraint::Linear { w, b: p.capacity[j] }
        })
        .collect();
    ProblemSpec::new(costs, constraints, sets, p.upsilon, p.gamma)
}
