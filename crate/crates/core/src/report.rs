//! Bound checks and summary figures computed from a finished trace.

use crate::attack::AttackSchedule;
use crate::error::Result;
use crate::metrics::{lemma2_bounds, lemma3_bounds, lemma4_bound, theorem1_bound, BoundRow};
use crate::problem::{monotonicity_constant, ProblemSpec};
use crate::sim::{IterationRecord, RunConfig, RunTrace};
use crate::solvers::{cbar_constant, conservative_transform, theorem2_condition, theorem2_rate, SolverKind};
use crate::vecops;

/// Squared distances below this are treated as converged when forming
/// ratios; oracle references certified to a residual near 1e-9 are not
/// more accurate than that.
pub const DIST_FLOOR: f64 = 1e-14;

/// Instance the coordinator works on: transformed for the robust solvers.
pub fn effective_spec(cfg: &RunConfig) -> Result<ProblemSpec> {
    match cfg.solver.alpha1() {
        Some(a) => conservative_transform(&cfg.spec, a),
        None => Ok(cfg.spec.clone()),
    }
}

/// Agents that are never attacked: the complement of a static set, every
/// agent otherwise.
pub fn trusted_members(cfg: &RunConfig) -> Vec<usize> {
    match &cfg.schedule {
        AttackSchedule::StaticSet { members } => (0..cfg.spec.n_agents).filter(|i| !members.contains(i)).collect(),
        _ => (0..cfg.spec.n_agents).collect(),
    }
}

fn honest_of(r: &IterationRecord, n: usize) -> Vec<usize> {
    (0..n).filter(|i| r.compromised.binary_search(i).is_err()).collect()
}

fn dual_rows(records: &[IterationRecord], lambda_bar: f64, out: &mut Vec<BoundRow>) {
    for r in records {
        let top = r.lambda.iter().copied().fold(0.0, f64::max);
        out.push(BoundRow::new(r.k, "dual_bound", top, lambda_bar));
    }
}

fn contraction_rows(cfg: &RunConfig, records: &[IterationRecord], out: &mut Vec<BoundRow>) {
    let spec = &cfg.spec;
    let g = spec.reg.gamma;
    let mu = monotonicity_constant(spec);
    let l = spec.bounds.l_phi;
    let factor = (1.0 - 2.0 * g * mu + g * g * l * l).max(0.0);
    for w in records.windows(2) {
        let (Some(d1), Some(d2)) = (w[0].dist_to_opt, w[1].dist_to_opt) else { continue };
        if d1 <= DIST_FLOOR {
            continue;
        }
        let steps = (w[1].k - w[0].k) as i32;
        out.push(BoundRow::new(w[1].k, "contraction_ratio", d2 / d1, factor.powi(steps)));
    }
}

fn static_rows(cfg: &RunConfig, alpha1: f64, eff: &ProblemSpec, records: &[IterationRecord], out: &mut Vec<BoundRow>) -> Result<()> {
    let spec = &cfg.spec;
    let n = spec.n_agents;
    let t = spec.n_constraints();
    let (b, l) = (spec.bounds.b, spec.bounds.l);
    let lambda_bar = eff.bounds.lambda_bar;
    for r in records {
        let h = honest_of(r, n);
        if h.is_empty() || (n - h.len()) as f64 > alpha1 * n as f64 + 1e-12 {
            continue;
        }
        let true_h = vecops::mean_over(&r.thetas, &h, spec.dim);
        let est_err = vecops::dist(&r.estimate, &true_h);
        let (bt, bl) = lemma2_bounds(alpha1, lambda_bar, l, b, t, est_err, h.len(), n);
        out.push(BoundRow::new(r.k, "perturbation_theta", r.perturbation.e_theta, bt));
        out.push(BoundRow::new(r.k, "perturbation_lambda", r.perturbation.e_lambda, bl));
    }
    if cfg.reference.is_none() || records.is_empty() {
        return Ok(());
    }
    let e_bar = records.iter().map(|r| r.perturbation.e_k).filter(|e| e.is_finite()).fold(0.0, f64::max);
    let up = (1.0 - alpha1) * spec.reg.upsilon;
    if let Ok(bound) = theorem1_bound(up, spec.reg.gamma, eff.bounds.l_phi, e_bar) {
        let tail = records.len() - (records.len() * 4) / 5;
        let tail = &records[records.len() - tail.max(1)..];
        let worst = tail.iter().filter_map(|r| r.dist_to_opt).fold(0.0, f64::max);
        out.push(BoundRow::new(records.last().unwrap().k, "neighborhood", worst, bound));
    }
    Ok(())
}

fn window_rows(cfg: &RunConfig, m: usize, alpha2: f64, records: &[IterationRecord], out: &mut Vec<BoundRow>) -> Result<()> {
    let spec = &cfg.spec;
    let n = spec.n_agents;
    let t = spec.n_constraints();
    let (b, l) = (spec.bounds.b, spec.bounds.l);
    for r in records {
        if r.agent_estimates.len() != n {
            continue;
        }
        let sum_dev: f64 = r.thetas.iter().zip(&r.agent_estimates).map(|(a, e)| vecops::dist(a, e)).sum();
        let (bt, bl) = lemma3_bounds(spec.bounds.lambda_bar, l, b, t, n, sum_dev);
        out.push(BoundRow::new(r.k, "perturbation_theta", r.perturbation.e_theta, bt));
        out.push(BoundRow::new(r.k, "perturbation_lambda", r.perturbation.e_lambda, bl));
    }
    if cfg.reference.is_none() {
        return Ok(());
    }
    let (g, u, lphi) = (spec.reg.gamma, spec.reg.upsilon, spec.bounds.l_phi);
    let cbar = cbar_constant(spec, m, alpha2)?;
    let lag = 2 * (m as u64 - 1);
    let consecutive = cfg.record_every == 1;
    if consecutive {
        for (idx, r) in records.iter().enumerate() {
            if r.k < lag {
                continue;
            }
            let lo = idx + 1 - (lag as usize + 1).min(idx + 1);
            let win = records[lo..=idx].iter().filter_map(|q| q.dist_to_opt).fold(0.0, f64::max);
            out.push(BoundRow::new(r.k, "window_perturbation", r.perturbation.e_k, lemma4_bound(g, cbar, win)));
        }
    }
    if theorem2_condition(g, u, lphi, cbar) <= 0.0 {
        return Ok(());
    }
    let rho = theorem2_rate(g, u, lphi, cbar, m);
    let Some(anchor) = records.iter().find(|r| r.k == lag).and_then(|r| r.dist_to_opt) else {
        return Ok(());
    };
    for r in records.iter().filter(|r| r.k >= lag) {
        if let Some(d) = r.dist_to_opt {
            out.push(BoundRow::new(r.k, "geometric_rate", d, rho.powf((r.k - lag) as f64) * anchor));
        }
    }
    Ok(())
}

/// Every bound the trace's solver admits, evaluated at the recorded
/// iterations. Rows whose hypotheses fail (too many attackers, step too
/// large, no reference) are left out.
pub fn bound_rows(trace: &RunTrace) -> Result<Vec<BoundRow>> {
    let cfg = &trace.config;
    let eff = effective_spec(cfg)?;
    let records = &trace.records;
    let mut out = Vec::new();
    dual_rows(records, eff.bounds.lambda_bar, &mut out);
    match cfg.solver {
        SolverKind::Basic => {
            if cfg.schedule == AttackSchedule::none() {
                contraction_rows(cfg, records, &mut out);
            }
        }
        SolverKind::RobustStatic { alpha1 } => static_rows(cfg, alpha1, &eff, records, &mut out)?,
        SolverKind::AveragingDynamic { window, alpha2 } => window_rows(cfg, window, alpha2, records, &mut out)?,
        SolverKind::Hybrid { .. } => {}
    }
    Ok(out)
}

/// Per-iteration geometric rate of ‖z − z*‖² between the first recorded
/// iterate past warmup and the last one above [`DIST_FLOOR`].
pub fn measured_rate(trace: &RunTrace) -> Option<f64> {
    let lag = trace.config.solver.window().map_or(0, |m| 2 * (m as u64 - 1));
    let pts: Vec<(u64, f64)> = trace
        .records
        .iter()
        .filter(|r| r.k >= lag)
        .filter_map(|r| r.dist_to_opt.map(|d| (r.k, d)))
        .filter(|&(_, d)| d > DIST_FLOOR && d.is_finite())
        .collect();
    let (&(k0, d0), &(k1, d1)) = (pts.first()?, pts.last()?);
    if k1 == k0 {
        return None;
    }
    Some((d1 / d0).powf(1.0 / (k1 - k0) as f64))
}
