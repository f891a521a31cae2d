//! Ground truth and bound checks.
//!
//! The saddle oracle uses only the problem substrate: it iterates the clean
//! projected recursion z ← P(z − γΦ(z)) with γ = υ/L_Φ², so it shares no
//! code with the estimators under test.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PdraError, Result};
use crate::problem::{
    analytic_lipschitz, closed_form_lipschitz, phi_restricted, price_vector, PrimalDualState,
    ProblemSpec,
};
use crate::vecops;

pub const ORACLE_MAX_ITERS: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleSolution {
    /// Agents the primal block covers, ascending.
    pub members: Vec<usize>,
    /// θ* per member, in member order.
    pub thetas: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    /// Fixed-point residual ‖z⁺ − z‖/γ at the returned point.
    pub residual: f64,
    pub iters: u64,
    pub gamma: f64,
    pub method: String,
}

impl SaddleSolution {
    /// ‖z − z*‖² over the members and λ.
    pub fn dist_sq(&self, state: &PrimalDualState) -> f64 {
        let mut s = vecops::dist_sq(&state.lambda, &self.lambda);
        for (th, &i) in self.thetas.iter().zip(&self.members) {
            s += vecops::dist_sq(&state.thetas[i], th);
        }
        s
    }

    pub fn theta_of(&self, agent: usize) -> Option<&[f64]> {
        self.members.iter().position(|&i| i == agent).map(|p| self.thetas[p].as_slice())
    }

    /// Full state with non-members filled from `fill`.
    pub fn to_state(&self, fill: &PrimalDualState) -> PrimalDualState {
        let mut s = fill.clone();
        for (th, &i) in self.thetas.iter().zip(&self.members) {
            s.thetas[i] = th.clone();
        }
        s.lambda = self.lambda.clone();
        s
    }
}

/// Saddle point of the regularized problem over all agents.
pub fn solve_saddle(spec: &ProblemSpec, tol: f64) -> Result<SaddleSolution> {
    let all: Vec<usize> = (0..spec.n_agents).collect();
    solve_saddle_restricted(spec, &all, tol)
}

/// L_Φ of the Lagrangian restricted to `members`.
pub fn restricted_lipschitz(spec: &ProblemSpec, n_members: usize) -> Result<f64> {
    if n_members == spec.n_agents && spec.closed_form_lipschitz && spec.is_quadratic_linear() {
        closed_form_lipschitz(spec)
    } else {
        Ok(analytic_lipschitz(spec, n_members))
    }
}

/// Saddle point of the Lagrangian restricted to `members`.
pub fn solve_saddle_restricted(spec: &ProblemSpec, members: &[usize], tol: f64) -> Result<SaddleSolution> {
    let l = restricted_lipschitz(spec, members.len())?;
    let gamma = spec.reg.upsilon / (l * l);
    solve_with_step(spec, members, tol, gamma, ORACLE_MAX_ITERS, None)
}

/// The oracle recursion with an explicit step and optional starting point.
pub fn solve_with_step(
    spec: &ProblemSpec,
    members: &[usize],
    tol: f64,
    gamma: f64,
    max_iters: u64,
    start: Option<&PrimalDualState>,
) -> Result<SaddleSolution> {
    if !(spec.reg.upsilon > 0.0) {
        return Err(PdraError::Config("the oracle needs υ > 0".into()));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(PdraError::Config(format!("oracle step γ = {gamma}")));
    }
    let mut state = match start {
        Some(s) => s.clone(),
        None => PrimalDualState::initial(spec)?,
    };
    let mut residual = f64::INFINITY;
    let mut next = state.thetas.clone();
    for it in 1..=max_iters {
        let (pg, dg) = phi_restricted(spec, &state.thetas, &state.lambda, members)?;
        let mut change = 0.0;
        for (g, &i) in pg.iter().zip(members) {
            let th = &state.thetas[i];
            let row = &mut next[i];
            for j in 0..th.len() {
                row[j] = th[j] - gamma * g[j];
            }
            spec.feasible_sets[i].project_in_place(row)?;
            change += vecops::dist_sq(row, th);
        }
        for (l, d) in state.lambda.iter_mut().zip(&dg) {
            let nl = (*l - gamma * d).max(0.0);
            change += (nl - *l) * (nl - *l);
            *l = nl;
        }
        for &i in members {
            std::mem::swap(&mut state.thetas[i], &mut next[i]);
        }
        residual = change.sqrt() / gamma;
        if residual <= tol {
            return Ok(SaddleSolution {
                members: members.to_vec(),
                thetas: members.iter().map(|&i| state.thetas[i].clone()).collect(),
                lambda: state.lambda,
                residual,
                iters: it,
                gamma,
                method: "projected-fixed-point".into(),
            });
        }
    }
    Err(PdraError::Oracle { iters: max_iters, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub e_theta: f64,
    pub e_lambda: f64,
    /// ‖e_θ‖² + ‖e_λ‖².
    pub e_k: f64,
}

/// Difference between the gradient the solver actually applied and the exact
/// gradient of the Lagrangian restricted to `members`.
///
/// `g_bar` is the broadcast, `dual_grad_used` the dual ascent direction the
/// coordinator used, and `state` holds the true θ with the λ the broadcast
/// was formed with.
pub fn measure_perturbation(
    spec_eff: &ProblemSpec,
    state: &PrimalDualState,
    g_bar: &[f64],
    dual_grad_used: &[f64],
    members: &[usize],
) -> Result<Perturbation> {
    if members.is_empty() {
        return Err(PdraError::Argument("empty member set".into()));
    }
    let avg = vecops::mean_over(&state.thetas, members, spec_eff.dim);
    let ratio = spec_eff.n_agents as f64 / members.len() as f64;
    let true_price = price_vector(spec_eff, &avg, &state.lambda);
    let n = spec_eff.n_agents as f64;
    let block_sq: f64 = g_bar
        .iter()
        .zip(&true_price)
        .map(|(a, b)| ((a - ratio * b) / n).powi(2))
        .sum();
    let e_theta = (members.len() as f64 * block_sq).sqrt();
    let e_lambda = spec_eff
        .constraints
        .iter()
        .zip(&state.lambda)
        .zip(dual_grad_used)
        .map(|((g, l), used)| (used - (g.value(&avg) - spec_eff.reg.upsilon * l)).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(Perturbation { e_theta, e_lambda, e_k: e_theta * e_theta + e_lambda * e_lambda })
}

/// (1/|S|) Σ_{i∈S} ‖θ_i − θ_i*‖².
pub fn mse(thetas: &[Vec<f64>], reference: &SaddleSolution, over: &[usize]) -> Result<f64> {
    if over.is_empty() {
        return Err(PdraError::Argument("MSE over an empty set".into()));
    }
    let mut s = 0.0;
    for &i in over {
        let r = reference
            .theta_of(i)
            .ok_or_else(|| PdraError::Argument(format!("agent {i} not covered by the reference")))?;
        s += vecops::dist_sq(&thetas[i], r);
    }
    Ok(s / over.len() as f64)
}

/// MSE against plain reference vectors.
pub fn mse_vectors(thetas: &[Vec<f64>], reference: &[Vec<f64>], over: &[usize]) -> Result<f64> {
    if over.is_empty() {
        return Err(PdraError::Argument("MSE over an empty set".into()));
    }
    Ok(over.iter().map(|&i| vecops::dist_sq(&thetas[i], &reference[i])).sum::<f64>() / over.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservatismReport {
    pub trials: usize,
    /// Trials whose trustworthy draw could not be made feasible.
    pub skipped: usize,
    pub violations: usize,
    /// Largest g_t(θ̄) observed; ≤ 0 means every trial was feasible.
    pub worst_margin: f64,
    pub witness: Option<Vec<Vec<f64>>>,
}

fn sample_in(set: &crate::problem::FeasibleSet, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let x: Vec<f64> = set
        .lower()
        .iter()
        .zip(set.upper())
        .map(|(&a, &b)| if a < b { rng.gen_range(a..=b) } else { a })
        .collect();
    set.project(&x)
}

fn random_corner(set: &crate::problem::FeasibleSet, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let x: Vec<f64> = set
        .lower()
        .iter()
        .zip(set.upper())
        .map(|(&a, &b)| if rng.gen_bool(0.5) { a } else { b })
        .collect();
    set.project(&x)
}

/// Samples trustworthy parameters feasible for the transformed constraints
/// (pushed onto their boundary by bisection toward the lower box corner),
/// places the `attacked` agents at random corners of their sets, and checks
/// the original constraints at the true average.
pub fn check_conservatism(
    spec: &ProblemSpec,
    transformed: &ProblemSpec,
    attacked: &[usize],
    trials: usize,
    seed: u64,
) -> Result<ConservatismReport> {
    if trials == 0 {
        return Err(PdraError::Argument("trials must be ≥ 1".into()));
    }
    let n = spec.n_agents;
    let honest: Vec<usize> = (0..n).filter(|i| !attacked.contains(i)).collect();
    if honest.is_empty() {
        return Err(PdraError::Argument("no trustworthy agents".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ConservatismReport {
        trials,
        skipped: 0,
        violations: 0,
        worst_margin: f64::NEG_INFINITY,
        witness: None,
    };
    let feasible_bar = |th: &[Vec<f64>]| -> bool {
        let avg = vecops::mean_over(th, &honest, spec.dim);
        transformed.constraints.iter().all(|g| g.value(&avg) <= 0.0)
    };
    for _ in 0..trials {
        let mut th = vec![vec![0.0; spec.dim]; n];
        for &i in &honest {
            th[i] = sample_in(&spec.feasible_sets[i], &mut rng)?;
        }
        let raw = th.clone();
        let shrink = |s: f64, th: &mut Vec<Vec<f64>>| -> Result<()> {
            for &i in &honest {
                let set = &spec.feasible_sets[i];
                let p: Vec<f64> = raw[i].iter().zip(set.lower()).map(|(x, lo)| lo + s * (x - lo)).collect();
                th[i] = set.project(&p)?;
            }
            Ok(())
        };
        if !feasible_bar(&th) {
            shrink(0.0, &mut th)?;
            if !feasible_bar(&th) {
                report.skipped += 1;
                continue;
            }
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                shrink(mid, &mut th)?;
                if feasible_bar(&th) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            shrink(lo, &mut th)?;
        }
        for &j in attacked {
            th[j] = random_corner(&spec.feasible_sets[j], &mut rng)?;
        }
        let avg = vecops::mean_of(&th, spec.dim);
        for g in &spec.constraints {
            let v = g.value(&avg);
            if v > report.worst_margin {
                report.worst_margin = v;
            }
            if v > 1e-12 {
                report.violations += 1;
                if report.witness.is_none() {
                    report.witness = Some(th.clone());
                }
            }
        }
    }
    Ok(report)
}

/// 1 − 2γυ + γ²L_Φ²: the per-step contraction factor of the clean recursion.
pub fn prop1_factor(gamma: f64, upsilon: f64, l_phi: f64) -> f64 {
    1.0 - 2.0 * gamma * upsilon + gamma * gamma * l_phi * l_phi
}

/// Right-hand sides of the static-attack perturbation bounds:
/// ((1−α₁)λ̄LT‖θ̂_H−θ̄_H‖ + ((|H|−(1−α₁)N)/|H|)λ̄BT, (1−α₁)BT‖θ̂_H−θ̄_H‖).
#[allow(clippy::too_many_arguments)]
pub fn lemma2_bounds(alpha1: f64, lambda_bar: f64, l: f64, b: f64, t: usize, est_err: f64, h: usize, n: usize) -> (f64, f64) {
    let t = t as f64;
    let lam_l = if l == 0.0 { 0.0 } else { lambda_bar * l };
    let frac = (h as f64 - (1.0 - alpha1) * n as f64) / h as f64;
    let lam_b = if frac == 0.0 || b == 0.0 { 0.0 } else { lambda_bar * b };
    ((1.0 - alpha1) * lam_l * t * est_err + frac * lam_b * t, (1.0 - alpha1) * b * t * est_err)
}

/// Right-hand sides of the averaging perturbation bounds:
/// ((λ̄LT/N)Σ‖θ_i−θ̂_i‖, (BT/N)Σ‖θ_i−θ̂_i‖).
pub fn lemma3_bounds(lambda_bar: f64, l: f64, b: f64, t: usize, n: usize, sum_dev: f64) -> (f64, f64) {
    let lam_l = if l == 0.0 { 0.0 } else { lambda_bar * l };
    let t = t as f64;
    let n = n as f64;
    (lam_l * t / n * sum_dev, b * t / n * sum_dev)
}

/// ((4/υ′ + 2γ)/(υ′ − 2γL_Φ²))·Ē, valid for γ < υ′/(2L_Φ²).
pub fn theorem1_bound(upsilon_p: f64, gamma: f64, l_phi: f64, e_bar: f64) -> Result<f64> {
    let den = upsilon_p - 2.0 * gamma * l_phi * l_phi;
    if !(den > 0.0) {
        return Err(PdraError::Config(format!("γ = {gamma} violates γ < υ′/(2L_Φ²)")));
    }
    Ok((4.0 / upsilon_p + 2.0 * gamma) / den * e_bar)
}

/// γ²C̄ · max_window ‖z − z*‖².
pub fn lemma4_bound(gamma: f64, cbar: f64, window_max_dist_sq: f64) -> f64 {
    gamma * gamma * cbar * window_max_dist_sq
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub iteration: u64,
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub slack: f64,
}

impl BoundRow {
    pub fn new(iteration: u64, name: &str, measured: f64, bound: f64) -> Self {
        BoundRow { iteration, name: name.to_string(), measured, bound, slack: bound - measured }
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.measured <= self.bound + tol
    }
}

/// Bound-check report with columns `iteration,name,measured,bound,slack`.
pub fn write_bound_rows<W: Write>(rows: &[BoundRow], header: Option<&str>, mut out: W) -> Result<()> {
    let io = |e: std::io::Error| PdraError::Config(format!("bound report write failed: {e}"));
    if let Some(h) = header {
        writeln!(out, "{h}").map_err(io)?;
    }
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| PdraError::Config(e.to_string()))?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lemma2_terms_vanish() {
        // θ̂_H = θ̄_H and |H| = (1−α₁)N
        let (a, b) = lemma2_bounds(0.2, 100.0, 1.0, 1.0, 2, 0.0, 4, 5);
        assert!(a.abs() < 1e-12 && b == 0.0);
    }

    #[test]
    fn theorem1_requires_small_step() {
        assert!(theorem1_bound(1.0, 1.0, 1.0, 1.0).is_err());
        let b = theorem1_bound(1.0, 0.1, 1.0, 2.0).unwrap();
        assert!((b - (4.2 / 0.8) * 2.0).abs() < 1e-12);
    }

    #[test]
    fn mse_arithmetic() {
        let r = SaddleSolution {
            members: vec![0],
            thetas: vec![vec![1.0]],
            lambda: vec![0.0],
            residual: 0.0,
            iters: 0,
            gamma: 1.0,
            method: String::new(),
        };
        assert!((mse(&[vec![1.1]], &r, &[0]).unwrap() - 0.01).abs() < 1e-12);
        assert_eq!(mse(&[vec![1.0]], &r, &[0]).unwrap(), 0.0);
        assert!(mse(&[vec![1.0]], &r, &[]).is_err());
    }

    #[test]
    fn bound_rows_csv() {
        let mut buf = Vec::new();
        write_bound_rows(&[BoundRow::new(3, "x", 1.0, 2.0)], Some("# h"), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# h\niteration,name,measured,bound,slack\n3,x,1.0,2.0,1.0\n");
    }
}
