use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use pdra_core::attack::{validate_assumption2, AttackSchedule};
use pdra_core::metrics::{
    mse, restricted_lipschitz, solve_with_step, write_bound_rows, BoundRow, SaddleSolution, ORACLE_MAX_ITERS,
};
use pdra_core::problem::ProblemSpec;
use pdra_core::problems::balance_residual;
use pdra_core::report::{bound_rows, effective_spec, measured_rate, trusted_members};
use pdra_core::sim::{run, write_trace_csv, RunConfig, RunTrace};
use pdra_core::solvers::{cbar_constant, max_stable_step, theorem2_condition, theorem2_rate, SolverKind};
use pdra_core::vecops;

use crate::config::{ExperimentConfig, ProblemConfig, ScheduleName, StepPolicy};
use crate::CliError;

/// MSE level reported as `iters_to_mse`.
pub const MSE_TARGET: f64 = 1e-3;
/// Slack allowed when counting violated bound rows.
pub const BOUND_TOL: f64 = 1e-9;

fn header(hash: &str) -> String {
    format!("# config_hash={hash}")
}

/// Writes `bytes` next to `path` and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

// ---------------------------------------------------------------- validate

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub l_phi: f64,
    pub lambda_bar: f64,
    pub cbar: Option<f64>,
    pub rho: Option<f64>,
    pub gamma: f64,
    pub stable_gamma: f64,
}

impl ValidationReport {
    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| c.status == CheckStatus::Fail)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let tag = match c.status {
                CheckStatus::Pass => "ok  ",
                CheckStatus::Warn => "warn",
                CheckStatus::Fail => "FAIL",
            };
            s.push_str(&format!("{tag} {:<14} {}\n", c.name, c.detail));
        }
        s.push_str(&format!("L_Phi = {:e}\nlambda_bar = {:e}\n", self.l_phi, self.lambda_bar));
        s.push_str(&format!("gamma = {:e} (rule: {:e})\n", self.gamma, self.stable_gamma));
        if let Some(c) = self.cbar {
            s.push_str(&format!("C_bar = {c:e}\n"));
        }
        if let Some(r) = self.rho {
            s.push_str(&format!("rho = {r}\n"));
        }
        s
    }
}

/// Dry-run checks: attack schedule against the solver's assumptions, step
/// size against the solver's rule, λ(0) against λ̄.
pub fn cmd_validate(cfg: &ExperimentConfig) -> Result<ValidationReport, CliError> {
    let run_cfg = cfg.build_run()?;
    let spec = &run_cfg.spec;
    let kind = &run_cfg.solver;
    let eff = effective_spec(&run_cfg)?;
    let mut checks = Vec::new();
    let n = spec.n_agents;

    if let (Some(a1), AttackSchedule::StaticSet { members }) = (kind.alpha1(), &run_cfg.schedule) {
        let ok = members.len() as f64 <= a1 * n as f64 + 1e-12;
        checks.push(Check {
            name: "attack_bound",
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            detail: format!("|A| = {} vs alpha1*N = {}", members.len(), a1 * n as f64),
        });
    }

    let mut cbar = None;
    if let SolverKind::AveragingDynamic { window, alpha2 } | SolverKind::Hybrid { window, alpha2, .. } = *kind {
        let horizon = run_cfg.iters.clamp(window as u64, 100_000);
        let rep = validate_assumption2(&run_cfg.schedule, n, horizon, window, alpha2)?;
        let detail = format!(
            "worst agent {} has {} compromised slots in the window starting at {} (limit {})",
            rep.worst_agent, rep.worst_count, rep.worst_window_start, rep.limit
        );
        let status = match (rep.pass, cfg.attack.schedule) {
            (true, _) => CheckStatus::Pass,
            (false, ScheduleName::Bernoulli) => CheckStatus::Warn,
            (false, _) => CheckStatus::Fail,
        };
        checks.push(Check { name: "assumption_2", status, detail });
        cbar = Some(cbar_constant(spec, window, alpha2)?);
    }

    // A window solver may admit no step at all (C̄ too large for υ).
    let rule_gamma = max_stable_step(spec, kind).map_or(0.0, |r| r.gamma);
    let gamma = spec.reg.gamma;
    let mut detail = format!("gamma = {gamma:e}, rule = {rule_gamma:e}");
    if let Some(c) = cbar {
        let f = theorem2_condition(gamma, spec.reg.upsilon, spec.bounds.l_phi, c);
        detail.push_str(&format!(", f(gamma) = {f:e}"));
    }
    let status = if gamma <= rule_gamma * (1.0 + 1e-12) {
        CheckStatus::Pass
    } else if cfg.solver.step_policy == StepPolicy::Empirical {
        CheckStatus::Warn
    } else {
        CheckStatus::Fail
    };
    checks.push(Check { name: "step_size", status, detail });

    let lambda0 = run_cfg.lambda0.clone().unwrap_or_else(|| vec![0.0; spec.n_constraints()]);
    let top = lambda0.iter().copied().fold(0.0, f64::max);
    checks.push(Check {
        name: "initial_dual",
        status: if top <= eff.bounds.lambda_bar { CheckStatus::Pass } else { CheckStatus::Fail },
        detail: format!("max lambda(0) = {top} vs lambda_bar = {:e}", eff.bounds.lambda_bar),
    });

    let rho = cbar.filter(|&c| theorem2_condition(gamma, spec.reg.upsilon, spec.bounds.l_phi, c) > 0.0).map(|c| theorem2_rate(gamma, spec.reg.upsilon, spec.bounds.l_phi, c, kind.window().unwrap_or(1)));
    Ok(ValidationReport {
        checks,
        l_phi: eff.bounds.l_phi,
        lambda_bar: eff.bounds.lambda_bar,
        cbar,
        rho,
        gamma,
        stable_gamma: rule_gamma,
    })
}

fn ensure_valid(cfg: &ExperimentConfig) -> Result<ValidationReport, CliError> {
    let rep = cmd_validate(cfg)?;
    if let Some(c) = rep.first_failure() {
        return Err(CliError::Validation(format!("{} check failed: {}", c.name, c.detail)));
    }
    Ok(rep)
}

// --------------------------------------------------------------------- run

/// Oracle solutions for a run: the clean optimum (MSE reference) and the
/// point distances are measured against.
pub struct References {
    pub clean: SaddleSolution,
    pub target: SaddleSolution,
}

fn solve(spec: &ProblemSpec, members: &[usize], cfg: &ExperimentConfig) -> Result<SaddleSolution, CliError> {
    let gamma = match cfg.oracle.gamma {
        Some(g) => g,
        None => {
            let l = restricted_lipschitz(spec, members.len())?;
            spec.reg.upsilon / (l * l)
        }
    };
    solve_with_step(spec, members, cfg.oracle.tol, gamma, ORACLE_MAX_ITERS, None)
        .map_err(|e| CliError::Solver(format!("oracle: {e}")))
}

pub fn references(cfg: &ExperimentConfig, run_cfg: &RunConfig) -> Result<Option<References>, CliError> {
    if !cfg.oracle.enabled {
        return Ok(None);
    }
    let all: Vec<usize> = (0..run_cfg.spec.n_agents).collect();
    let clean = solve(&run_cfg.spec, &all, cfg)?;
    let static_attack = matches!(run_cfg.schedule, AttackSchedule::StaticSet { .. });
    let target = if run_cfg.solver.alpha1().is_some() && static_attack {
        solve(&effective_spec(run_cfg)?, &trusted_members(run_cfg), cfg)?
    } else {
        clean.clone()
    };
    Ok(Some(References { clean, target }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub solver: String,
    pub iters: u64,
    pub seed: u64,
    pub final_mse: Option<f64>,
    pub max_violation: f64,
    pub final_violation: f64,
    pub measured_rate: Option<f64>,
    pub final_dist_to_opt: Option<f64>,
    /// First recorded iteration with MSE ≤ [`MSE_TARGET`].
    pub iters_to_mse: Option<u64>,
    pub trusted_mean: Vec<f64>,
    pub true_mean: Vec<f64>,
    pub max_lambda: f64,
    pub lambda_bar: f64,
    pub balance_residual: Option<f64>,
    pub bounds_checked: usize,
    pub bounds_violated: usize,
    pub uplinks: u64,
}

impl RunSummary {
    fn rows(&self) -> Vec<(String, String)> {
        let mut r = vec![
            ("solver".to_string(), self.solver.clone()),
            ("iters".into(), self.iters.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("final_mse".into(), fmt_opt(self.final_mse)),
            ("max_violation".into(), self.max_violation.to_string()),
            ("final_violation".into(), self.final_violation.to_string()),
            ("measured_rate".into(), fmt_opt(self.measured_rate)),
            ("final_dist_to_opt".into(), fmt_opt(self.final_dist_to_opt)),
            ("iters_to_mse".into(), self.iters_to_mse.map_or(String::new(), |k| k.to_string())),
        ];
        for (j, v) in self.trusted_mean.iter().enumerate() {
            r.push((format!("trusted_mean_{j}"), v.to_string()));
        }
        for (j, v) in self.true_mean.iter().enumerate() {
            r.push((format!("true_mean_{j}"), v.to_string()));
        }
        r.push(("max_lambda".into(), self.max_lambda.to_string()));
        r.push(("lambda_bar".into(), self.lambda_bar.to_string()));
        if let Some(b) = self.balance_residual {
            r.push(("balance_residual".into(), b.to_string()));
        }
        r.push(("bounds_checked".into(), self.bounds_checked.to_string()));
        r.push(("bounds_violated".into(), self.bounds_violated.to_string()));
        r.push(("uplinks".into(), self.uplinks.to_string()));
        r
    }
}

pub fn summarize(
    cfg: &ExperimentConfig,
    trace: &RunTrace,
    refs: Option<&References>,
    bounds: &[BoundRow],
) -> Result<RunSummary, CliError> {
    let run_cfg = &trace.config;
    let spec = &run_cfg.spec;
    let trusted = trusted_members(run_cfg);
    let thetas = &trace.final_state.thetas;
    let final_mse = refs.map(|r| mse(thetas, &r.clean, &trusted)).transpose()?;
    let iters_to_mse = match refs {
        Some(r) => {
            let mut hit = None;
            for rec in &trace.records {
                if mse(&rec.thetas, &r.clean, &trusted)? <= MSE_TARGET {
                    hit = Some(rec.k);
                    break;
                }
            }
            hit
        }
        None => None,
    };
    let true_mean = trace.final_state.mean_theta();
    let final_violation = spec.constraints.iter().map(|g| g.value(&true_mean).max(0.0)).fold(0.0, f64::max);
    let max_lambda = trace.records.iter().flat_map(|r| r.lambda.iter().copied()).fold(0.0, f64::max);
    Ok(RunSummary {
        solver: run_cfg.solver.label().to_string(),
        iters: trace.final_state.iter,
        seed: run_cfg.seed,
        final_mse,
        max_violation: trace.max_violation().max(final_violation),
        final_violation,
        measured_rate: measured_rate(trace),
        final_dist_to_opt: run_cfg.reference.as_ref().map(|r| r.dist_sq(&trace.final_state)),
        iters_to_mse,
        trusted_mean: vecops::mean_over(thetas, &trusted, spec.dim),
        true_mean,
        max_lambda,
        lambda_bar: effective_spec(run_cfg)?.bounds.lambda_bar,
        balance_residual: matches!(cfg.problem, ProblemConfig::Powernet { .. }).then(|| balance_residual(thetas)),
        bounds_checked: bounds.len(),
        bounds_violated: bounds.iter().filter(|b| !b.holds(BOUND_TOL * b.bound.abs().max(1.0))).count(),
        uplinks: trace.messages.uplinks,
    })
}

pub struct RunOutcome {
    pub hash: String,
    pub out_dir: PathBuf,
    pub trace: RunTrace,
    pub summary: RunSummary,
    pub bounds: Vec<BoundRow>,
    /// Set when the run stopped early; outputs hold the partial trace.
    pub failure: Option<String>,
}

fn write_outputs(dir: &Path, cfg: &ExperimentConfig, hash: &str, trace: &RunTrace, summary: &RunSummary, bounds: &[BoundRow]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let h = header(hash);
    let mut buf = Vec::new();
    write_trace_csv(trace, Some(&h), &mut buf)?;
    write_atomic(&dir.join("trace.csv"), &buf)?;
    let mut buf = Vec::new();
    write_bound_rows(bounds, Some(&h), &mut buf)?;
    write_atomic(&dir.join("bounds.csv"), &buf)?;
    let mut buf = Vec::new();
    writeln!(buf, "{h}\nmetric,value").expect("in-memory write");
    for (k, v) in summary.rows() {
        writeln!(buf, "{k},{v}").expect("in-memory write");
    }
    write_atomic(&dir.join("summary.csv"), &buf)?;
    let mut text = format!("{h}\n");
    text.push_str(&cfg.to_toml());
    write_atomic(&dir.join("config.toml"), text.as_bytes())
}

/// One run into `out_dir` (the config's output directory when `None`).
pub fn execute(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunOutcome, CliError> {
    ensure_valid(cfg)?;
    let hash = cfg.hash();
    let mut run_cfg = cfg.build_run()?;
    let refs = references(cfg, &run_cfg)?;
    if let Some(r) = &refs {
        run_cfg = run_cfg.with_reference(r.target.clone());
    }
    let (trace, failure) = match run(run_cfg) {
        Ok(t) => (t, None),
        Err(f) => {
            let msg = f.error.to_string();
            (*f.partial, Some(msg))
        }
    };
    let bounds = bound_rows(&trace)?;
    let summary = summarize(cfg, &trace, refs.as_ref(), &bounds)?;
    let dir = out_dir.map_or_else(|| cfg.output.dir.clone(), Path::to_path_buf);
    write_outputs(&dir, cfg, &hash, &trace, &summary, &bounds)?;
    Ok(RunOutcome { hash, out_dir: dir, trace, summary, bounds, failure })
}

/// `run`: validates, solves the oracle, runs, writes trace.csv, bounds.csv,
/// summary.csv and the resolved config.toml.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let t0 = Instant::now();
    let out = execute(cfg, None)?;
    eprintln!("run finished in {:.3} s, outputs in {}", t0.elapsed().as_secs_f64(), out.out_dir.display());
    if let Some(msg) = &out.failure {
        return Err(CliError::Solver(msg.clone()));
    }
    Ok(out)
}

// ------------------------------------------------------------------- sweep

#[derive(Debug, Clone, PartialEq)]
pub struct CellKey {
    pub alpha1: Option<f64>,
    pub p: Option<f64>,
    pub window: Option<usize>,
    pub alpha2: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub index: usize,
    pub key: CellKey,
    pub cell_hash: String,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
    pub violation_series: Vec<(u64, f64)>,
}

pub struct SweepOutcome {
    pub hash: String,
    pub cells: Vec<CellResult>,
}

impl SweepOutcome {
    pub fn all_ok(&self) -> bool {
        self.cells.iter().all(|c| c.error.is_none())
    }
}

fn axis<T: Clone>(values: &[T], base: Option<T>) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![base]
    } else {
        values.iter().cloned().map(Some).collect()
    }
}

/// Cross product of the sweep axes; an empty axis keeps the base value.
pub fn sweep_cells(cfg: &ExperimentConfig) -> Vec<(CellKey, ExperimentConfig)> {
    let s = &cfg.sweep;
    let mut out = Vec::new();
    for a1 in axis(&s.alpha1, cfg.solver.alpha1) {
        for p in axis(&s.p, cfg.attack.p) {
            for w in axis(&s.window, cfg.solver.window) {
                for a2 in axis(&s.alpha2, cfg.solver.alpha2) {
                    for seed in axis(&s.seeds, Some(cfg.run.seed)).into_iter().flatten() {
                        let mut c = cfg.clone();
                        c.sweep = Default::default();
                        c.solver.alpha1 = a1;
                        c.attack.p = p;
                        c.solver.window = w;
                        c.solver.alpha2 = a2;
                        c.run.seed = seed;
                        out.push((CellKey { alpha1: a1, p, window: w, alpha2: a2, seed }, c));
                    }
                }
            }
        }
    }
    out
}

fn cell_count(cfg: &ExperimentConfig) -> usize {
    let s = &cfg.sweep;
    [s.alpha1.len(), s.p.len(), s.window.len(), s.alpha2.len(), s.seeds.len()]
        .iter()
        .map(|&n| n.max(1))
        .product()
}

fn key_cols(k: &CellKey) -> String {
    let o = |v: Option<f64>| fmt_opt(v);
    format!("{},{},{},{},{}", o(k.alpha1), o(k.p), k.window.map_or(String::new(), |w| w.to_string()), o(k.alpha2), k.seed)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `sweep`: every cell is an isolated run written to `cell_NNNN/`; the
/// aggregate files are summary.csv, mse_vs_alpha.csv and
/// violation_vs_iter.csv.
pub fn cmd_sweep(cfg: &ExperimentConfig, allow_large: bool) -> Result<SweepOutcome, CliError> {
    if cfg.sweep.is_empty() {
        return Err(CliError::Validation("sweep needs at least one non-empty axis".into()));
    }
    let count = cell_count(cfg);
    if count > cfg.sweep.max_cells && !allow_large {
        return Err(CliError::Validation(format!(
            "sweep has {count} cells, above the cap of {}; pass --allow-large to run it",
            cfg.sweep.max_cells
        )));
    }
    let cells = sweep_cells(cfg);
    for (_, c) in &cells {
        ensure_valid(c)?;
    }
    let hash = cfg.hash();
    let root = cfg.output.dir.clone();
    fs::create_dir_all(&root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
    let t0 = Instant::now();
    let results: Vec<CellResult> = cells
        .into_par_iter()
        .enumerate()
        .map(|(index, (key, c))| {
            let cell_hash = c.hash();
            let dir = root.join(format!("cell_{index:04}"));
            match execute(&c, Some(&dir)) {
                Ok(o) => {
                    let series = o
                        .trace
                        .records
                        .iter()
                        .map(|r| (r.k, r.violation.iter().copied().fold(0.0, f64::max)))
                        .collect();
                    CellResult { index, key, cell_hash, summary: Some(o.summary), error: o.failure, violation_series: series }
                }
                Err(e) => CellResult { index, key, cell_hash, summary: None, error: Some(e.to_string()), violation_series: vec![] },
            }
        })
        .collect();
    eprintln!("sweep of {} cells finished in {:.3} s", results.len(), t0.elapsed().as_secs_f64());

    let h = header(&hash);
    let mut buf = format!("{h}\ncell,config_hash,cell_hash,alpha1,p,window,alpha2,seed,status,final_mse,max_violation,final_violation,measured_rate,iters_to_mse,bounds_violated\n");
    for c in &results {
        let status = c.error.as_deref().map_or("ok".to_string(), |e| format!("\"error: {}\"", e.replace('"', "'")));
        let s = c.summary.as_ref();
        buf.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            c.index,
            hash,
            c.cell_hash,
            key_cols(&c.key),
            status,
            fmt_opt(s.and_then(|s| s.final_mse)),
            s.map_or(String::new(), |s| s.max_violation.to_string()),
            s.map_or(String::new(), |s| s.final_violation.to_string()),
            fmt_opt(s.and_then(|s| s.measured_rate)),
            s.and_then(|s| s.iters_to_mse).map_or(String::new(), |k| k.to_string()),
            s.map_or(String::new(), |s| s.bounds_violated.to_string()),
        ));
    }
    write_atomic(&root.join("summary.csv"), buf.as_bytes())?;

    let mut groups: Vec<(CellKey, Vec<f64>)> = Vec::new();
    for c in &results {
        let Some(m) = c.summary.as_ref().and_then(|s| s.final_mse) else { continue };
        let k = CellKey { seed: 0, ..c.key.clone() };
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(m),
            None => groups.push((k, vec![m])),
        }
    }
    let mut buf = format!("{h}\nalpha1,p,window,alpha2,seeds,median_mse,min_mse,max_mse\n");
    for (k, mut v) in groups {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n = v.len();
        let med = median(&mut v);
        let cols = key_cols(&k);
        let cols = &cols[..cols.rfind(',').unwrap()];
        buf.push_str(&format!("{cols},{n},{med},{lo},{hi}\n"));
    }
    write_atomic(&root.join("mse_vs_alpha.csv"), buf.as_bytes())?;

    let mut buf = format!("{h}\ncell,alpha1,p,window,alpha2,seed,iter,max_violation\n");
    for c in &results {
        for (k, v) in &c.violation_series {
            buf.push_str(&format!("{},{},{k},{v}\n", c.index, key_cols(&c.key)));
        }
    }
    write_atomic(&root.join("violation_vs_iter.csv"), buf.as_bytes())?;
    Ok(SweepOutcome { hash, cells: results })
}
