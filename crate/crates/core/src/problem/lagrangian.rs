//! Gradients of the regularized Lagrangian, the Φ map and its constants.
//!
//! The restricted forms take a member set S ⊆ [N] and evaluate
//! (1/N)Σ_{i∈S} f_i + Σ_t λ_t h_t(θ̄_S) + (υ/2N)Σ_{i∈S}‖θ_i‖² − (υ/2)‖λ‖²,
//! which is the plain Lagrangian when S = [N] and the trustworthy-only
//! Lagrangian of the robust problem when S = H and h_t is the transformed
//! constraint.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{PrimalDualState, ProblemSpec};
use crate::error::{PdraError, Result};
use crate::vecops;

/// Safety factor applied to sampled Lipschitz ratios.
pub const LIPSCHITZ_SAFETY: f64 = 1.2;

/// Above this stacked dimension the closed-form L_Φ is refused.
pub const CLOSED_FORM_MAX_DIM: usize = 2000;

fn check_len(context: &'static str, expected: usize, v: &[f64]) -> Result<()> {
    if v.len() != expected {
        return Err(PdraError::Dimension { context, expected, actual: v.len() });
    }
    Ok(())
}

/// Σ_t λ_t ∇g_t(avg), chain rule included.
pub fn price_vector(spec: &ProblemSpec, avg: &[f64], lambda: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; spec.dim];
    for (g, &l) in spec.constraints.iter().zip(lambda) {
        if l != 0.0 {
            g.add_grad(avg, l, &mut p);
        }
    }
    p
}

/// Σ_t λ_t (∇outer_t)(scale·avg): the broadcast form used by the solvers.
pub fn outer_price_vector(spec: &ProblemSpec, avg: &[f64], lambda: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; spec.dim];
    for (g, &l) in spec.constraints.iter().zip(lambda) {
        if l != 0.0 {
            g.add_outer_grad(avg, l, &mut p);
        }
    }
    p
}

/// (1/N)(∇f_i(θ_i) + υθ_i + p) for an already formed price vector p.
pub fn agent_gradient(spec: &ProblemSpec, agent: usize, theta: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    let n = spec.n_agents as f64;
    let u = spec.reg.upsilon;
    let mut g = spec.costs[agent].grad(theta);
    if !vecops::all_finite(&g) {
        return Err(PdraError::NumericalDomain { what: "cost gradient of agent", index: agent });
    }
    for j in 0..g.len() {
        g[j] = (g[j] + u * theta[j] + p[j]) / n;
    }
    Ok(g)
}

/// ∇_{θ_i} L_υ with the caller's average substituted:
/// (1/N)(∇f_i(θ_i) + υθ_i + Σ_t λ_t ∇g_t(avg)).
pub fn eval_lagrangian_grad_primal(
    spec: &ProblemSpec,
    state: &PrimalDualState,
    avg_theta: &[f64],
    agent: usize,
) -> Result<Vec<f64>> {
    spec.check_agent(agent)?;
    check_len("average parameter", spec.dim, avg_theta)?;
    check_len("dual vector", spec.n_constraints(), &state.lambda)?;
    let theta = state
        .thetas
        .get(agent)
        .ok_or(PdraError::Dimension { context: "agent parameters", expected: spec.n_agents, actual: state.thetas.len() })?;
    check_len("agent parameter", spec.dim, theta)?;
    let p = price_vector(spec, avg_theta, &state.lambda);
    agent_gradient(spec, agent, theta, &p)
}

/// ∇_λ L_υ: component t is g_t(avg) − υλ_t.
pub fn eval_lagrangian_grad_dual(
    spec: &ProblemSpec,
    state: &PrimalDualState,
    avg_theta: &[f64],
) -> Result<Vec<f64>> {
    check_len("average parameter", spec.dim, avg_theta)?;
    check_len("dual vector", spec.n_constraints(), &state.lambda)?;
    dual_gradient(spec, &state.lambda, avg_theta)
}

pub(crate) fn dual_gradient(spec: &ProblemSpec, lambda: &[f64], avg: &[f64]) -> Result<Vec<f64>> {
    spec.constraints
        .iter()
        .zip(lambda)
        .enumerate()
        .map(|(t, (g, &l))| {
            let v = g.value(avg);
            if v.is_finite() {
                Ok(v - spec.reg.upsilon * l)
            } else {
                Err(PdraError::NumericalDomain { what: "constraint", index: t })
            }
        })
        .collect()
}

/// Φ(z): per-agent primal gradients at the true average, then υλ − g(θ̄).
pub fn compute_phi(spec: &ProblemSpec, state: &PrimalDualState) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..spec.n_agents).collect();
    let (primal, dual) = phi_restricted(spec, &state.thetas, &state.lambda, &all)?;
    let mut out: Vec<f64> = primal.into_iter().flatten().collect();
    out.extend(dual);
    Ok(out)
}

/// Φ restricted to `members`. Returns the primal blocks in member order and
/// the negated dual gradient υλ − h(θ̄_S).
pub fn phi_restricted(
    spec: &ProblemSpec,
    thetas: &[Vec<f64>],
    lambda: &[f64],
    members: &[usize],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if members.is_empty() {
        return Err(PdraError::Argument("empty member set".into()));
    }
    check_len("dual vector", spec.n_constraints(), lambda)?;
    for &i in members {
        spec.check_agent(i)?;
        check_len("agent parameter", spec.dim, &thetas[i])?;
    }
    let avg = vecops::mean_over(thetas, members, spec.dim);
    let mut p = price_vector(spec, &avg, lambda);
    let ratio = spec.n_agents as f64 / members.len() as f64;
    if ratio != 1.0 {
        p.iter_mut().for_each(|v| *v *= ratio);
    }
    let primal = members
        .iter()
        .map(|&i| agent_gradient(spec, i, &thetas[i], &p))
        .collect::<Result<Vec<_>>>()?;
    let dual = dual_gradient(spec, lambda, &avg)?.into_iter().map(|v| -v).collect();
    Ok((primal, dual))
}

/// M/υ.
pub fn dual_bound(spec: &ProblemSpec, constraint_sup: f64) -> Result<f64> {
    if spec.reg.upsilon == 0.0 {
        return Err(PdraError::Config("dual bound undefined for υ = 0".into()));
    }
    if !(constraint_sup >= 0.0) {
        return Err(PdraError::Argument(format!("M must be ≥ 0, got {constraint_sup}")));
    }
    Ok(constraint_sup / spec.reg.upsilon)
}

/// Strong monotonicity modulus of Φ over the feasible region:
/// min(min_i (μ_i + υ)/N, υ) with μ_i the cost curvature floor on C_i.
pub fn monotonicity_constant(spec: &ProblemSpec) -> f64 {
    let n = spec.n_agents as f64;
    let u = spec.reg.upsilon;
    spec.costs
        .iter()
        .zip(&spec.feasible_sets)
        .map(|(c, s)| {
            let mu = c.curvature_inf(s.lower(), s.upper());
            let mu = if mu.is_finite() { mu } else { 0.0 };
            (mu + u) / n
        })
        .fold(u, f64::min)
}

fn spectral_norm(rows: usize, cols: usize, data: &[f64]) -> f64 {
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let m = DMatrix::from_row_slice(rows, cols, data);
    m.singular_values().iter().fold(0.0_f64, |a, b| a.max(*b))
}

/// Rigorous analytic bound on L_Φ for a restriction to `members` agents:
/// max(max_i (curv_i + υ)/N + λ̄ Σ_t L_t / n, υ) + ‖G‖/√n, where G stacks the
/// constraint gradients (exact for linear constraints, Frobenius otherwise).
pub fn analytic_lipschitz(spec: &ProblemSpec, members: usize) -> f64 {
    let (lo, hi) = spec.union_box();
    let u = spec.reg.upsilon;
    let w = spec.n_agents as f64;
    let n = members.max(1) as f64;
    let curv = spec
        .costs
        .iter()
        .zip(&spec.feasible_sets)
        .map(|(c, s)| c.curvature_sup(s.lower(), s.upper()))
        .fold(0.0_f64, f64::max);
    let sum_l: f64 = spec.constraints.iter().map(|g| g.smoothness(&lo, &hi).1).sum();
    let mut p_norm = (curv + u) / w;
    if sum_l > 0.0 {
        p_norm += spec.bounds.lambda_bar * sum_l / n;
    }
    let linear: Option<Vec<Vec<f64>>> = spec.constraints.iter().map(|g| g.linear_gradient()).collect();
    let g_norm = match linear {
        Some(cols) => {
            let t = cols.len();
            let mut data = vec![0.0; spec.dim * t];
            for (c, col) in cols.iter().enumerate() {
                for j in 0..spec.dim {
                    data[j * t + c] = col[j];
                }
            }
            spectral_norm(spec.dim, t, &data)
        }
        None => spec
            .constraints
            .iter()
            .map(|g| g.smoothness(&lo, &hi).0.powi(2))
            .sum::<f64>()
            .sqrt(),
    };
    p_norm.max(u) + g_norm / n.sqrt()
}

/// Exact ‖J‖₂ of the constant Jacobian of Φ for quadratic costs and linear
/// constraints.
pub fn closed_form_lipschitz(spec: &ProblemSpec) -> Result<f64> {
    if !spec.is_quadratic_linear() {
        return Err(PdraError::Config("closed form needs quadratic costs and linear constraints".into()));
    }
    let (nn, d, t) = (spec.n_agents, spec.dim, spec.n_constraints());
    let size = nn * d + t;
    if size > CLOSED_FORM_MAX_DIM {
        return Err(PdraError::Config(format!(
            "closed-form L_Φ limited to dimension {CLOSED_FORM_MAX_DIM}, instance has {size}"
        )));
    }
    let u = spec.reg.upsilon;
    let w = nn as f64;
    let grads: Vec<Vec<f64>> = spec
        .constraints
        .iter()
        .map(|g| g.linear_gradient().expect("checked linear"))
        .collect();
    let mut data = vec![0.0; size * size];
    for i in 0..nn {
        let curv: Vec<f64> = match &spec.costs[i] {
            super::families::Cost::Quadratic { a, .. } => a.iter().map(|a| 2.0 * a).collect(),
            _ => vec![0.0; d],
        };
        for j in 0..d {
            let r = i * d + j;
            data[r * size + r] = (curv[j] + u) / w;
            for (c, g) in grads.iter().enumerate() {
                let col = nn * d + c;
                data[r * size + col] = g[j] / w;
                data[col * size + r] = -g[j] / w;
            }
        }
    }
    for c in 0..t {
        let r = nn * d + c;
        data[r * size + r] = u;
    }
    Ok(spectral_norm(size, size, &data))
}

fn sample_state(spec: &ProblemSpec, rng: &mut ChaCha8Rng, lambda_hi: f64) -> PrimalDualState {
    let thetas = spec
        .feasible_sets
        .iter()
        .map(|s| {
            (0..spec.dim)
                .map(|j| {
                    let (a, b) = (s.lower()[j], s.upper()[j]);
                    if a < b { rng.gen_range(a..=b) } else { a }
                })
                .collect()
        })
        .collect();
    let lambda = (0..spec.n_constraints())
        .map(|_| if lambda_hi > 0.0 { rng.gen_range(0.0..=lambda_hi) } else { 0.0 })
        .collect();
    PrimalDualState::new(thetas, lambda)
}

fn local_neighbor(spec: &ProblemSpec, z: &PrimalDualState, rng: &mut ChaCha8Rng, lambda_hi: f64) -> PrimalDualState {
    let mut out = z.clone();
    for (i, s) in spec.feasible_sets.iter().enumerate() {
        for j in 0..spec.dim {
            let (a, b) = (s.lower()[j], s.upper()[j]);
            let h = 1e-3 * (b - a);
            out.thetas[i][j] = (z.thetas[i][j] + rng.gen_range(-1.0..=1.0) * h).clamp(a, b);
        }
    }
    for l in out.lambda.iter_mut() {
        let h = 1e-3 * lambda_hi.max(1e-12);
        *l = (*l + rng.gen_range(-1.0..=1.0) * h).clamp(0.0, lambda_hi);
    }
    out
}

/// Sampled estimate of L_Φ over the feasible boxes × [0, λ̄]^T, times 1.2.
/// Half the pairs are independent uniform draws, half are close neighbours.
/// Instances flagged for the closed form return the exact operator norm.
pub fn estimate_lipschitz(spec: &ProblemSpec, samples: usize, rng_seed: u64) -> Result<f64> {
    if samples < 2 {
        return Err(PdraError::Argument("estimate_lipschitz needs at least 2 samples".into()));
    }
    if spec.closed_form_lipschitz && spec.is_quadratic_linear() {
        return closed_form_lipschitz(spec);
    }
    let lambda_hi = spec.bounds.lambda_bar;
    if !lambda_hi.is_finite() {
        return Err(PdraError::Config("λ̄ is infinite (υ = 0); cannot sample the dual box".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut best = 0.0_f64;
    let mut usable = 0usize;
    for s in 0..samples {
        let z = sample_state(spec, &mut rng, lambda_hi);
        let z2 = if s % 2 == 0 {
            sample_state(spec, &mut rng, lambda_hi)
        } else {
            local_neighbor(spec, &z, &mut rng, lambda_hi)
        };
        let dz = vecops::dist(&z.flatten(), &z2.flatten());
        if dz == 0.0 {
            continue;
        }
        let p1 = compute_phi(spec, &z)?;
        let p2 = compute_phi(spec, &z2)?;
        best = best.max(vecops::dist(&p1, &p2) / dz);
        usable += 1;
    }
    if usable < 2 {
        return Err(PdraError::Sampling(format!("only {usable} usable pairs out of {samples}")));
    }
    Ok(LIPSCHITZ_SAFETY * best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Constraint, Cost, FeasibleSet};

    fn zero_instance(upsilon: f64) -> ProblemSpec {
        ProblemSpec::new(
            vec![Cost::Zero],
            vec![Constraint::Linear { w: vec![0.0, 0.0], b: 0.0 }],
            vec![FeasibleSet::new_box(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()],
            upsilon,
            Some(0.1),
        )
        .unwrap()
    }

    #[test]
    fn dual_bound_cases() {
        let s = zero_instance(0.1);
        assert!((dual_bound(&s, 2.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(dual_bound(&s, 0.0).unwrap(), 0.0);
        let s0 = zero_instance(1.0).with_upsilon(0.0).unwrap();
        assert!(matches!(dual_bound(&s0, 1.0), Err(PdraError::Config(_))));
    }

    #[test]
    fn zero_instance_lipschitz_is_upsilon() {
        // g ≡ 0 gives M = 0, so the dual box collapses; widen it by hand
        let mut s = zero_instance(1.0);
        s.bounds.lambda_bar = 3.0;
        assert_eq!(estimate_lipschitz(&s, 50, 7).unwrap(), 1.2);
        let mut s2 = zero_instance(2.0);
        s2.bounds.lambda_bar = 3.0;
        assert_eq!(estimate_lipschitz(&s2, 50, 7).unwrap(), 2.4);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(estimate_lipschitz(&zero_instance(1.0), 1, 0), Err(PdraError::Argument(_))));
    }

    #[test]
    fn restricted_equals_full_for_all_members() {
        let s = ProblemSpec::new(
            vec![Cost::Quadratic { a: vec![1.0], c: vec![10.0] }; 3],
            vec![Constraint::Linear { w: vec![1.0], b: 5.0 }],
            vec![FeasibleSet::new_box(vec![0.0], vec![10.0]).unwrap(); 3],
            0.5,
            None,
        )
        .unwrap();
        let st = PrimalDualState::new(vec![vec![1.0], vec![2.0], vec![6.0]], vec![0.7]);
        let phi = compute_phi(&s, &st).unwrap();
        let avg = st.mean_theta();
        for i in 0..3 {
            let g = eval_lagrangian_grad_primal(&s, &st, &avg, i).unwrap();
            assert_eq!(g[0], phi[i]);
        }
        let d = eval_lagrangian_grad_dual(&s, &st, &avg).unwrap();
        assert_eq!(-d[0], phi[3]);
    }

    #[test]
    fn nonfinite_gradient_names_agent() {
        let s = ProblemSpec::new(
            vec![Cost::Zero, Cost::Exponential { w: vec![1.0], c: vec![1000.0] }],
            vec![Constraint::Linear { w: vec![1.0], b: 5.0 }],
            vec![FeasibleSet::new_box(vec![0.0], vec![1.0]).unwrap(); 2],
            0.5,
            Some(0.1),
        )
        .unwrap();
        let st = PrimalDualState::new(vec![vec![0.0], vec![1.0]], vec![0.0]);
        let err = eval_lagrangian_grad_primal(&s, &st, &[0.5], 1).unwrap_err();
        assert_eq!(err, PdraError::NumericalDomain { what: "cost gradient of agent", index: 1 });
    }
}
