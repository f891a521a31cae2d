//! Coordinator-side and agent-side steps of the four solvers.
//!
//! The agent update has the same form for every solver; solvers differ only
//! in how the coordinator forms the average that the price vector and the
//! dual update are evaluated at.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::attack::Inbox;
use crate::error::{PdraError, Result};
use crate::par::Exec;
use crate::problem::{dual_gradient, outer_price_vector, Constraint, ProblemSpec};
use crate::robust::{c_alpha, robust_mean_estimate, RobustMeanConfig};
use crate::vecops;

/// Margin applied to the largest step satisfying the averaging condition.
pub const STEP_MARGIN: f64 = 0.9;
pub const BISECTION_ITERS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverKind {
    Basic,
    RobustStatic { alpha1: f64 },
    AveragingDynamic { window: usize, alpha2: f64 },
    Hybrid { alpha1: f64, window: usize, alpha2: f64 },
}

/// ⌊(m−1)/2⌋ / m: the largest α₂ for which α₂m ≤ ⌊(m−1)/2⌋.
pub fn largest_alpha2(window: usize) -> f64 {
    if window == 0 {
        return 0.0;
    }
    ((window - 1) / 2) as f64 / window as f64
}

impl SolverKind {
    pub fn validate(&self) -> Result<()> {
        let a_ok = |a: f64| (0.0..0.5).contains(&a);
        match *self {
            SolverKind::Basic => Ok(()),
            SolverKind::RobustStatic { alpha1 } if !a_ok(alpha1) => {
                Err(PdraError::Config(format!("α₁ = {alpha1} outside [0, 0.5)")))
            }
            SolverKind::RobustStatic { .. } => Ok(()),
            SolverKind::AveragingDynamic { window, alpha2 } | SolverKind::Hybrid { window, alpha2, .. } => {
                if let SolverKind::Hybrid { alpha1, .. } = *self {
                    if !a_ok(alpha1) {
                        return Err(PdraError::Config(format!("α₁ = {alpha1} outside [0, 0.5)")));
                    }
                }
                if window == 0 {
                    return Err(PdraError::Config("window must be ≥ 1".into()));
                }
                if !a_ok(alpha2) {
                    return Err(PdraError::Config(format!("α₂ = {alpha2} outside [0, 0.5)")));
                }
                Ok(())
            }
        }
    }

    pub fn window(&self) -> Option<usize> {
        match *self {
            SolverKind::AveragingDynamic { window, .. } | SolverKind::Hybrid { window, .. } => Some(window),
            _ => None,
        }
    }

    pub fn alpha1(&self) -> Option<f64> {
        match *self {
            SolverKind::RobustStatic { alpha1 } | SolverKind::Hybrid { alpha1, .. } => Some(alpha1),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SolverKind::Basic => "basic",
            SolverKind::RobustStatic { .. } => "robust",
            SolverKind::AveragingDynamic { .. } => "averaging",
            SolverKind::Hybrid { .. } => "hybrid",
        }
    }
}

/// Price vector sent to every agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadcastSignal {
    pub g_bar: Vec<f64>,
    pub iter: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinatorMemory {
    pub lambda: Vec<f64>,
    /// Last m received payloads per agent, oldest first. Empty unless the
    /// solver uses a window.
    pub history: Vec<VecDeque<Vec<f64>>>,
    /// The average the last broadcast was evaluated at (θ̂ or θ̂_H).
    pub avg_estimate: Vec<f64>,
    /// Per-agent estimates θ̂_i of the last step (window solvers); the raw
    /// reports during warmup.
    pub agent_estimates: Vec<Vec<f64>>,
    /// g(avg) − υλ as used in the last dual update.
    pub last_dual_grad: Vec<f64>,
    /// Rounds in which some payload was non-finite.
    pub poisoned_rounds: u64,
}

impl CoordinatorMemory {
    pub fn new(spec: &ProblemSpec, lambda0: Vec<f64>) -> Self {
        CoordinatorMemory {
            lambda: lambda0,
            history: Vec::new(),
            avg_estimate: vec![0.0; spec.dim],
            agent_estimates: Vec::new(),
            last_dual_grad: vec![0.0; spec.n_constraints()],
            poisoned_rounds: 0,
        }
    }

    fn push_history(&mut self, inbox: &Inbox, window: usize) {
        if self.history.len() != inbox.len() {
            self.history = vec![VecDeque::with_capacity(window); inbox.len()];
        }
        for (h, p) in self.history.iter_mut().zip(inbox.payloads()) {
            if h.len() == window {
                h.pop_front();
            }
            h.push_back(p.clone());
        }
    }
}

fn check_inbox(spec: &ProblemSpec, inbox: &Inbox) -> Result<()> {
    if inbox.len() != spec.n_agents {
        return Err(PdraError::Dimension { context: "uplink reports", expected: spec.n_agents, actual: inbox.len() });
    }
    if let Some(p) = inbox.payloads().iter().find(|p| p.len() != spec.dim) {
        return Err(PdraError::Dimension { context: "report payload", expected: spec.dim, actual: p.len() });
    }
    Ok(())
}

/// Price vector and projected dual update at the estimate `x`.
fn price_and_dual(mem: &mut CoordinatorMemory, spec: &ProblemSpec, x: Vec<f64>, k: u64) -> Result<BroadcastSignal> {
    let g_bar = outer_price_vector(spec, &x, &mem.lambda);
    let dg = dual_gradient(spec, &mem.lambda, &x)?;
    let gamma = spec.reg.gamma;
    for (l, d) in mem.lambda.iter_mut().zip(&dg) {
        *l = (*l + gamma * d).max(0.0);
    }
    mem.last_dual_grad = dg;
    mem.avg_estimate = x;
    Ok(BroadcastSignal { g_bar, iter: k })
}

fn note_poison(mem: &mut CoordinatorMemory, inbox: &Inbox) {
    if inbox.any_nonfinite() {
        mem.poisoned_rounds += 1;
    }
}

/// Naive average, then the price vector and the dual update.
pub fn basic_coordinator_step(
    mem: &mut CoordinatorMemory,
    inbox: &Inbox,
    spec: &ProblemSpec,
    k: u64,
) -> Result<BroadcastSignal> {
    check_inbox(spec, inbox)?;
    note_poison(mem, inbox);
    let avg = vecops::mean_of(inbox.payloads(), spec.dim);
    price_and_dual(mem, spec, avg, k)
}

/// Robust mean θ̂_H of the reports, evaluated on the transformed constraints.
pub fn robust_coordinator_step(
    mem: &mut CoordinatorMemory,
    inbox: &Inbox,
    spec_bar: &ProblemSpec,
    alpha1: f64,
    k: u64,
) -> Result<BroadcastSignal> {
    check_inbox(spec_bar, inbox)?;
    note_poison(mem, inbox);
    let cfg = RobustMeanConfig::new(alpha1, spec_bar.n_agents)?;
    let est = robust_mean_estimate(inbox.payloads(), &cfg)?;
    price_and_dual(mem, spec_bar, est, k)
}

fn window_estimates(mem: &CoordinatorMemory, m: usize, alpha2: f64, exec: Exec) -> Result<Vec<Vec<f64>>> {
    if mem.history.iter().any(|h| h.len() != m) {
        return Err(PdraError::Invariant("report window underfull after warmup".into()));
    }
    let cfg = RobustMeanConfig::new(alpha2, m)?;
    exec.map(mem.history.len(), |i| {
        let h = &mem.history[i];
        let pts: Vec<&[f64]> = h.iter().map(|v| v.as_slice()).collect();
        robust_mean_estimate(&pts, &cfg)
    })
    .into_iter()
    .collect()
}

/// Windowed robust averaging. Before k = m−1 this is the basic step.
pub fn averaging_coordinator_step(
    mem: &mut CoordinatorMemory,
    inbox: &Inbox,
    spec: &ProblemSpec,
    m: usize,
    alpha2: f64,
    k: u64,
    exec: Exec,
) -> Result<BroadcastSignal> {
    check_inbox(spec, inbox)?;
    mem.push_history(inbox, m);
    if k + 1 < m as u64 {
        mem.agent_estimates = inbox.payloads().to_vec();
        return basic_coordinator_step(mem, inbox, spec, k);
    }
    note_poison(mem, inbox);
    let est = window_estimates(mem, m, alpha2, exec)?;
    let avg = vecops::mean_of(&est, spec.dim);
    mem.agent_estimates = est;
    price_and_dual(mem, spec, avg, k)
}

/// Window estimates per agent followed by the static robust step over them.
/// Before k = m−1 this is the plain robust step.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_coordinator_step(
    mem: &mut CoordinatorMemory,
    inbox: &Inbox,
    spec_bar: &ProblemSpec,
    alpha1: f64,
    m: usize,
    alpha2: f64,
    k: u64,
    exec: Exec,
) -> Result<BroadcastSignal> {
    check_inbox(spec_bar, inbox)?;
    mem.push_history(inbox, m);
    if k + 1 < m as u64 {
        mem.agent_estimates = inbox.payloads().to_vec();
        return robust_coordinator_step(mem, inbox, spec_bar, alpha1, k);
    }
    note_poison(mem, inbox);
    let est = window_estimates(mem, m, alpha2, exec)?;
    let cfg = RobustMeanConfig::new(alpha1, spec_bar.n_agents)?;
    let x = robust_mean_estimate(&est, &cfg)?;
    mem.agent_estimates = est;
    price_and_dual(mem, spec_bar, x, k)
}

/// θ_i ← P_{C_i}(θ_i − (γ/N)(g_bar + ∇f_i(θ_i) + υθ_i)).
pub fn agent_step(theta: &[f64], signal: &BroadcastSignal, spec: &ProblemSpec, agent: usize) -> Result<Vec<f64>> {
    spec.check_agent(agent)?;
    if theta.len() != spec.dim || signal.g_bar.len() != spec.dim {
        return Err(PdraError::Dimension { context: "agent step", expected: spec.dim, actual: theta.len() });
    }
    let grad = spec.costs[agent].grad(theta);
    if !vecops::all_finite(&grad) {
        return Err(PdraError::NumericalDomain { what: "cost gradient of agent", index: agent });
    }
    let step = spec.reg.gamma / spec.n_agents as f64;
    let u = spec.reg.upsilon;
    let mut next: Vec<f64> = (0..theta.len())
        .map(|j| theta[j] - step * (signal.g_bar[j] + grad[j] + u * theta[j]))
        .collect();
    spec.feasible_sets[agent].project_in_place(&mut next)?;
    Ok(next)
}

/// Replaces each g_t by ḡ_t((1−α₁)x) = g_t((1−α₁)x) + α₁(RB + ½LR²). L_Φ of
/// the result is computed for a trustworthy set of ⌈(1−α₁)N⌉ agents.
pub fn conservative_transform(spec: &ProblemSpec, alpha1: f64) -> Result<ProblemSpec> {
    if !(0.0..0.5).contains(&alpha1) {
        return Err(PdraError::Config(format!("α₁ = {alpha1} outside [0, 0.5)")));
    }
    if alpha1 == 0.0 {
        return Ok(spec.clone());
    }
    let b = &spec.bounds;
    if !(b.b.is_finite() && b.l.is_finite() && b.r.is_finite()) {
        return Err(PdraError::Config("smoothness bounds unavailable for the transform".into()));
    }
    let shift = alpha1 * (b.r * b.b + 0.5 * b.l * b.r * b.r);
    let constraints = spec
        .constraints
        .iter()
        .map(|g| Constraint::Scaled { inner: Box::new(g.clone()), scale: 1.0 - alpha1, shift })
        .collect();
    let members = ((1.0 - alpha1) * spec.n_agents as f64 - 1e-9).ceil().max(1.0) as usize;
    let mut out = ProblemSpec::new(
        spec.costs.clone(),
        constraints,
        spec.feasible_sets.clone(),
        spec.reg.upsilon,
        Some(spec.reg.gamma),
    )?;
    out.closed_form_lipschitz = spec.closed_form_lipschitz;
    out.with_lipschitz_members(members)
}

/// C̄ = (T²(λ̄²L²+B²)/N)(1/L_Φ + (1+√d)λ̄LT)²((1+C_α)/(1−α₂)+C_α)²(m−1)².
pub fn cbar_constant(spec: &ProblemSpec, m: usize, alpha2: f64) -> Result<f64> {
    if m < 1 {
        return Err(PdraError::Argument("window must be ≥ 1".into()));
    }
    let bd = &spec.bounds;
    cbar_from(
        spec.n_constraints() as f64,
        spec.n_agents as f64,
        spec.dim,
        bd.lambda_bar,
        bd.l,
        bd.b,
        bd.l_phi,
        m,
        alpha2,
    )
}

/// [`cbar_constant`] on explicit constants.
#[allow(clippy::too_many_arguments)]
pub fn cbar_from(t: f64, n: f64, d: usize, lambda_bar: f64, l: f64, b: f64, l_phi: f64, m: usize, alpha2: f64) -> Result<f64> {
    if m < 1 {
        return Err(PdraError::Argument("window must be ≥ 1".into()));
    }
    if m == 1 {
        return Ok(0.0);
    }
    let ca = c_alpha(alpha2, d)?;
    // λ̄·L with L = 0 is 0 even when λ̄ is unbounded
    let lam_l = if l == 0.0 { 0.0 } else { lambda_bar * l };
    let lead = t * t * (lam_l * lam_l + b * b) / n;
    if lead == 0.0 {
        return Ok(0.0);
    }
    let mid = 1.0 / l_phi + (1.0 + (d as f64).sqrt()) * lam_l * t;
    let tail = (1.0 + ca) / (1.0 - alpha2) + ca;
    let w = (m - 1) as f64;
    Ok(lead * mid * mid * tail * tail * w * w)
}

/// υ − 2γL_Φ² − 4C̄γ²/υ − 2C̄γ³.
pub fn theorem2_condition(gamma: f64, upsilon: f64, l_phi: f64, cbar: f64) -> f64 {
    upsilon - 2.0 * gamma * l_phi * l_phi - 4.0 * cbar * gamma * gamma / upsilon - 2.0 * cbar * gamma.powi(3)
}

/// (1 − γυ + 2γ²L_Φ² + 4C̄γ³/υ + 2C̄γ⁴)^{1/(2m−1)}.
pub fn theorem2_rate(gamma: f64, upsilon: f64, l_phi: f64, cbar: f64, m: usize) -> f64 {
    let base = 1.0 - gamma * upsilon + 2.0 * gamma * gamma * l_phi * l_phi
        + 4.0 * cbar * gamma.powi(3) / upsilon
        + 2.0 * cbar * gamma.powi(4);
    base.powf(1.0 / (2 * m - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepChoice {
    pub gamma: f64,
    /// Geometric rate per iteration (window solvers only).
    pub rho: Option<f64>,
    pub cbar: Option<f64>,
    /// L_Φ the rule was evaluated with.
    pub l_phi: f64,
}

fn averaging_step(spec: &ProblemSpec, m: usize, alpha2: f64) -> Result<StepChoice> {
    let u = spec.reg.upsilon;
    let l = spec.bounds.l_phi;
    let cbar = cbar_constant(spec, m, alpha2)?;
    let (mut lo, mut hi) = (0.0, u / (2.0 * l * l));
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if theorem2_condition(mid, u, l, cbar) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gamma = STEP_MARGIN * lo;
    if !(gamma > 0.0) || theorem2_condition(gamma, u, l, cbar) <= 0.0 {
        return Err(PdraError::Config(format!(
            "no admissible step: υ={u}, L_Φ={l}, C̄={cbar:e}"
        )));
    }
    Ok(StepChoice { gamma, rho: Some(theorem2_rate(gamma, u, l, cbar, m)), cbar: Some(cbar), l_phi: l })
}

/// Step size rule per solver. For the robust and hybrid solvers `spec` is
/// the original instance; the transform is applied internally.
pub fn max_stable_step(spec: &ProblemSpec, kind: &SolverKind) -> Result<StepChoice> {
    kind.validate()?;
    let u = spec.reg.upsilon;
    if !(u > 0.0) {
        return Err(PdraError::Config("step rules need υ > 0".into()));
    }
    let rule = match *kind {
        SolverKind::Basic => {
            let l = spec.bounds.l_phi;
            StepChoice { gamma: u / (4.0 * l * l), rho: None, cbar: None, l_phi: l }
        }
        SolverKind::RobustStatic { alpha1 } => robust_step(spec, alpha1)?,
        SolverKind::AveragingDynamic { window, alpha2 } => averaging_step(spec, window, alpha2)?,
        SolverKind::Hybrid { alpha1, window, alpha2 } => {
            let r = robust_step(spec, alpha1)?;
            let a = averaging_step(spec, window, alpha2)?;
            if r.gamma <= a.gamma { StepChoice { rho: a.rho, cbar: a.cbar, ..r } } else { a }
        }
    };
    if !(rule.gamma > 0.0 && rule.gamma.is_finite()) {
        return Err(PdraError::Config(format!("step rule produced γ = {}", rule.gamma)));
    }
    Ok(rule)
}

fn robust_step(spec: &ProblemSpec, alpha1: f64) -> Result<StepChoice> {
    let bar = conservative_transform(spec, alpha1)?;
    let up = (1.0 - alpha1) * spec.reg.upsilon;
    let l = bar.bounds.l_phi;
    let gamma = (STEP_MARGIN * up / (2.0 * l * l)).min(up / (4.0 * l * l));
    Ok(StepChoice { gamma, rho: None, cbar: None, l_phi: l })
}

/// Coordinator state machine used by the round driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coordinator {
    pub kind: SolverKind,
    /// Instance the coordinator evaluates constraints on (transformed for
    /// the robust and hybrid solvers).
    pub spec: ProblemSpec,
    pub mem: CoordinatorMemory,
}

impl Coordinator {
    pub fn new(spec: &ProblemSpec, kind: SolverKind, lambda0: Vec<f64>) -> Result<Self> {
        kind.validate()?;
        let eff = match kind.alpha1() {
            Some(a) => conservative_transform(spec, a)?,
            None => spec.clone(),
        };
        let mem = CoordinatorMemory::new(&eff, lambda0);
        Ok(Coordinator { kind, spec: eff, mem })
    }

    pub fn step(&mut self, inbox: &Inbox, k: u64, exec: Exec) -> Result<BroadcastSignal> {
        match self.kind {
            SolverKind::Basic => basic_coordinator_step(&mut self.mem, inbox, &self.spec, k),
            SolverKind::RobustStatic { alpha1 } => {
                robust_coordinator_step(&mut self.mem, inbox, &self.spec, alpha1, k)
            }
            SolverKind::AveragingDynamic { window, alpha2 } => {
                averaging_coordinator_step(&mut self.mem, inbox, &self.spec, window, alpha2, k, exec)
            }
            SolverKind::Hybrid { alpha1, window, alpha2 } => {
                hybrid_coordinator_step(&mut self.mem, inbox, &self.spec, alpha1, window, alpha2, k, exec)
            }
        }
    }
}
