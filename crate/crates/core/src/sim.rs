//! Round driver: agents report, the attack corrupts, the coordinator
//! broadcasts, agents step. Records ground truth alongside.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attack::{corrupt, AdversaryStrategy, AttackSchedule, Inbox};
use crate::error::{PdraError, Result};
use crate::metrics::{measure_perturbation, Perturbation, SaddleSolution};
use crate::par::Exec;
use crate::problem::{PrimalDualState, ProblemSpec};
use crate::solvers::{agent_step, BroadcastSignal, Coordinator, SolverKind};
use crate::vecops;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub spec: ProblemSpec,
    pub solver: SolverKind,
    pub schedule: AttackSchedule,
    pub strategy: AdversaryStrategy,
    pub iters: u64,
    /// Recorded for provenance; schedule and adversary carry their own seeds
    /// (see [`RunConfig::reseed`]).
    pub seed: u64,
    pub record_every: u64,
    #[serde(default)]
    pub exec: Exec,
    /// Starting θ per agent; defaults to P_{C_i}(0).
    #[serde(default)]
    pub theta0: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub lambda0: Option<Vec<f64>>,
    /// Saddle point to report ‖z − z*‖² against.
    #[serde(default)]
    pub reference: Option<SaddleSolution>,
}

impl RunConfig {
    pub fn new(spec: ProblemSpec, solver: SolverKind, iters: u64) -> Self {
        RunConfig {
            spec,
            solver,
            schedule: AttackSchedule::none(),
            strategy: AdversaryStrategy::NegateTrue,
            iters,
            seed: 0,
            record_every: 1,
            exec: Exec::default(),
            theta0: None,
            lambda0: None,
            reference: None,
        }
    }

    pub fn with_attack(mut self, schedule: AttackSchedule, strategy: AdversaryStrategy) -> Self {
        self.schedule = schedule;
        self.strategy = strategy;
        self
    }

    pub fn with_record_every(mut self, every: u64) -> Self {
        self.record_every = every;
        self
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_reference(mut self, reference: SaddleSolution) -> Self {
        self.reference = Some(reference);
        self
    }

    /// Sets `seed` and pushes it into the Bernoulli schedule and the uniform
    /// adversary.
    pub fn reseed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let AttackSchedule::BernoulliDynamic { seed: s, .. } = &mut self.schedule {
            *s = seed;
        }
        if let AdversaryStrategy::UniformRandom { seed: s, .. } = &mut self.strategy {
            *s = seed.wrapping_add(1);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(PdraError::Config("iters must be ≥ 1".into()));
        }
        if self.record_every == 0 {
            return Err(PdraError::Config("record_every must be ≥ 1".into()));
        }
        self.spec.validate()?;
        self.solver.validate()?;
        self.schedule.validate(self.spec.n_agents)?;
        self.strategy.validate(self.spec.dim)?;
        if !(self.spec.reg.gamma > 0.0) {
            return Err(PdraError::Config("step size must be positive".into()));
        }
        if let Some(l0) = &self.lambda0 {
            if l0.len() != self.spec.n_constraints() {
                return Err(PdraError::Dimension {
                    context: "initial λ",
                    expected: self.spec.n_constraints(),
                    actual: l0.len(),
                });
            }
            let bar = self.spec.bounds.lambda_bar;
            if l0.iter().any(|&l| !(l >= 0.0) || l > bar) {
                return Err(PdraError::Config(format!("initial λ must lie in [0, {bar}]")));
            }
        }
        if let Some(t0) = &self.theta0 {
            if t0.len() != self.spec.n_agents {
                return Err(PdraError::Dimension { context: "initial θ", expected: self.spec.n_agents, actual: t0.len() });
            }
            for (i, th) in t0.iter().enumerate() {
                if th.len() != self.spec.dim {
                    return Err(PdraError::Dimension { context: "initial θ", expected: self.spec.dim, actual: th.len() });
                }
                if !self.spec.feasible_sets[i].contains(th, 1e-9) {
                    return Err(PdraError::Config(format!("initial θ of agent {i} is outside its feasible set")));
                }
            }
        }
        Ok(())
    }

    fn initial_state(&self) -> Result<PrimalDualState> {
        let mut s = PrimalDualState::initial(&self.spec)?;
        if let Some(t0) = &self.theta0 {
            s.thetas = t0.clone();
        }
        if let Some(l0) = &self.lambda0 {
            s.lambda = l0.clone();
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: u64,
    /// True θ^(k) of every agent.
    pub thetas: Vec<Vec<f64>>,
    /// λ^(k), the multiplier the broadcast was formed with.
    pub lambda: Vec<f64>,
    pub broadcast: BroadcastSignal,
    /// Coordinator's estimate of the average at round k.
    pub estimate: Vec<f64>,
    /// Per-agent window estimates (window solvers past warmup).
    pub agent_estimates: Vec<Vec<f64>>,
    pub compromised: Vec<usize>,
    /// max{0, g_t(θ̄)} on the original constraints at the true average.
    pub violation: Vec<f64>,
    pub perturbation: Perturbation,
    pub dist_to_opt: Option<f64>,
}

impl IterationRecord {
    pub fn true_average(&self) -> Vec<f64> {
        vecops::mean_of(&self.thetas, self.thetas.first().map_or(0, |t| t.len()))
    }

    pub fn state(&self) -> PrimalDualState {
        PrimalDualState { thetas: self.thetas.clone(), lambda: self.lambda.clone(), iter: self.k }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageStats {
    pub uplinks: u64,
    pub broadcasts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub config: RunConfig,
    pub records: Vec<IterationRecord>,
    pub final_state: PrimalDualState,
    /// Full coordinator memory, ring buffers included.
    pub coordinator: Option<Coordinator>,
    pub messages: MessageStats,
}

impl RunTrace {
    pub fn last_record(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// Max over records of the largest per-constraint violation.
    pub fn max_violation(&self) -> f64 {
        self.records
            .iter()
            .flat_map(|r| r.violation.iter().copied())
            .fold(0.0, f64::max)
    }
}

/// A run that stopped early, with everything recorded up to the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: PdraError,
    pub partial: Box<RunTrace>,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({} records kept)", self.error, self.partial.records.len())
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<RunFailure> for PdraError {
    fn from(f: RunFailure) -> Self {
        f.error
    }
}

fn perturbation_members(kind: &SolverKind, n: usize, compromised: &[usize]) -> Vec<usize> {
    match kind {
        SolverKind::Basic | SolverKind::AveragingDynamic { .. } => (0..n).collect(),
        SolverKind::RobustStatic { .. } | SolverKind::Hybrid { .. } => {
            (0..n).filter(|i| compromised.binary_search(i).is_err()).collect()
        }
    }
}

/// One round from `state`. Returns the broadcast and the record contents
/// when `record` is set.
fn round(
    cfg: &RunConfig,
    coord: &mut Coordinator,
    state: &mut PrimalDualState,
    record: bool,
) -> Result<Option<IterationRecord>> {
    let spec = &cfg.spec;
    let k = state.iter;
    let reports = corrupt(&state.thetas, &cfg.schedule, &cfg.strategy, k, spec);
    let compromised: Vec<usize> = reports.iter().filter(|r| r.compromised).map(|r| r.agent).collect();
    let inbox = Inbox::from_reports(&reports);
    drop(reports);
    let signal = coord.step(&inbox, k, cfg.exec)?;
    let rec = if record {
        let members = perturbation_members(&coord.kind, spec.n_agents, &compromised);
        let perturbation = if members.is_empty() {
            Perturbation { e_theta: f64::NAN, e_lambda: f64::NAN, e_k: f64::NAN }
        } else {
            measure_perturbation(&coord.spec, state, &signal.g_bar, &coord.mem.last_dual_grad, &members)?
        };
        let avg = state.mean_theta();
        let violation = spec.constraints.iter().map(|g| g.value(&avg).max(0.0)).collect();
        Some(IterationRecord {
            k,
            thetas: state.thetas.clone(),
            lambda: state.lambda.clone(),
            broadcast: signal.clone(),
            estimate: coord.mem.avg_estimate.clone(),
            agent_estimates: coord.mem.agent_estimates.clone(),
            compromised,
            violation,
            perturbation,
            dist_to_opt: cfg.reference.as_ref().map(|r| r.dist_sq(state)),
        })
    } else {
        None
    };
    let next: Vec<Vec<f64>> = cfg
        .exec
        .map(spec.n_agents, |i| agent_step(&state.thetas[i], &signal, spec, i))
        .into_iter()
        .collect::<Result<_>>()?;
    state.thetas = next;
    state.lambda.clone_from(&coord.mem.lambda);
    state.iter += 1;
    Ok(rec)
}

fn drive(
    cfg: &RunConfig,
    coord: &mut Coordinator,
    state: &mut PrimalDualState,
    until: u64,
    messages: &mut MessageStats,
    sink: &mut dyn FnMut(IterationRecord),
) -> Result<()> {
    while state.iter < until {
        let k = state.iter;
        let rec = round(cfg, coord, state, k % cfg.record_every == 0)
            .map_err(|e| PdraError::Solver { iter: k, source: Box::new(e) })?;
        messages.uplinks += cfg.spec.n_agents as u64;
        messages.broadcasts += 1;
        if let Some(r) = rec {
            sink(r);
        }
    }
    Ok(())
}

fn execute(
    cfg: RunConfig,
    coord: Coordinator,
    mut state: PrimalDualState,
    mut records: Vec<IterationRecord>,
    mut messages: MessageStats,
    until: u64,
    observer: Option<&mut dyn FnMut(&IterationRecord)>,
) -> std::result::Result<RunTrace, RunFailure> {
    let mut coord = coord;
    let res = match observer {
        Some(obs) => drive(&cfg, &mut coord, &mut state, until, &mut messages, &mut |r| obs(&r)),
        None => drive(&cfg, &mut coord, &mut state, until, &mut messages, &mut |r| records.push(r)),
    };
    let trace = RunTrace { config: cfg, records, final_state: state, coordinator: Some(coord), messages };
    match res {
        Ok(()) => Ok(trace),
        Err(error) => Err(RunFailure { error, partial: Box::new(trace) }),
    }
}

fn start(cfg: &RunConfig) -> Result<(Coordinator, PrimalDualState)> {
    cfg.validate()?;
    let state = cfg.initial_state()?;
    let coord = Coordinator::new(&cfg.spec, cfg.solver.clone(), state.lambda.clone())?;
    Ok((coord, state))
}

fn setup_failure(cfg: RunConfig, error: PdraError) -> RunFailure {
    let final_state = PrimalDualState::initial(&cfg.spec).unwrap_or_else(|_| PrimalDualState::new(Vec::new(), Vec::new()));
    RunFailure {
        error,
        partial: Box::new(RunTrace {
            config: cfg,
            records: Vec::new(),
            final_state,
            coordinator: None,
            messages: MessageStats::default(),
        }),
    }
}

/// Runs `cfg.iters` rounds and keeps every `record_every`-th record.
pub fn run(cfg: RunConfig) -> std::result::Result<RunTrace, RunFailure> {
    let (coord, state) = match start(&cfg) {
        Ok(x) => x,
        Err(e) => return Err(setup_failure(cfg, e)),
    };
    let until = cfg.iters;
    execute(cfg, coord, state, Vec::new(), MessageStats::default(), until, None)
}

/// Like [`run`] but hands each record to `observer` instead of storing it.
pub fn run_with_observer(
    cfg: RunConfig,
    observer: &mut dyn FnMut(&IterationRecord),
) -> std::result::Result<RunTrace, RunFailure> {
    let (coord, state) = match start(&cfg) {
        Ok(x) => x,
        Err(e) => return Err(setup_failure(cfg, e)),
    };
    let until = cfg.iters;
    execute(cfg, coord, state, Vec::new(), MessageStats::default(), until, Some(observer))
}

/// Continues a finished run for `extra_iters` more rounds. The result equals
/// a single run of the combined length.
pub fn resume(trace: RunTrace, extra_iters: u64) -> std::result::Result<RunTrace, RunFailure> {
    let RunTrace { mut config, records, final_state, coordinator, messages } = trace;
    let Some(coord) = coordinator else {
        let t = RunTrace { config, records, final_state, coordinator: None, messages };
        return Err(RunFailure {
            error: PdraError::Argument("trace carries no coordinator memory".into()),
            partial: Box::new(t),
        });
    };
    let until = final_state.iter + extra_iters;
    config.iters = until;
    execute(config, coord, final_state, records, messages, until, None)
}

/// Trace CSV: one row per (record, agent) with θ, λ, violations, E_k and the
/// distance to the reference when one is attached.
pub fn write_trace_csv<W: Write>(trace: &RunTrace, header: Option<&str>, mut out: W) -> Result<()> {
    let io = |e: std::io::Error| PdraError::Config(format!("trace write failed: {e}"));
    if let Some(h) = header {
        writeln!(out, "{h}").map_err(io)?;
    }
    let spec = &trace.config.spec;
    let with_ref = trace.config.reference.is_some();
    let mut w = csv::Writer::from_writer(out);
    let mut cols = vec!["iter".to_string(), "agent".to_string(), "compromised".to_string()];
    cols.extend((0..spec.dim).map(|j| format!("theta_{j}")));
    cols.extend((0..spec.n_constraints()).map(|t| format!("lambda_{t}")));
    cols.extend((0..spec.n_constraints()).map(|t| format!("violation_{t}")));
    cols.push("e_k".into());
    if with_ref {
        cols.push("dist_to_opt".into());
    }
    let csv_err = |e: csv::Error| PdraError::Config(format!("trace write failed: {e}"));
    w.write_record(&cols).map_err(csv_err)?;
    for r in &trace.records {
        for (i, th) in r.thetas.iter().enumerate() {
            let mut row = vec![r.k.to_string(), i.to_string(), (r.compromised.binary_search(&i).is_ok() as u8).to_string()];
            row.extend(th.iter().map(|v| v.to_string()));
            row.extend(r.lambda.iter().map(|v| v.to_string()));
            row.extend(r.violation.iter().map(|v| v.to_string()));
            row.push(r.perturbation.e_k.to_string());
            if with_ref {
                row.push(r.dist_to_opt.map_or(String::new(), |d| d.to_string()));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Constraint, Cost, FeasibleSet};

    fn tiny() -> ProblemSpec {
        ProblemSpec::new(
            vec![Cost::Quadratic { a: vec![1.0], c: vec![1.0] }; 3],
            vec![Constraint::Linear { w: vec![1.0], b: 0.5 }],
            vec![FeasibleSet::new_box(vec![0.0], vec![2.0]).unwrap(); 3],
            0.1,
            Some(0.05),
        )
        .unwrap()
    }

    #[test]
    fn rejects_zero_iters_and_record_every() {
        let cfg = RunConfig::new(tiny(), SolverKind::Basic, 0);
        assert!(matches!(run(cfg).unwrap_err().error, PdraError::Config(_)));
        let cfg = RunConfig::new(tiny(), SolverKind::Basic, 3).with_record_every(0);
        assert!(run(cfg).is_err());
    }

    #[test]
    fn record_count_and_order() {
        let cfg = RunConfig::new(tiny(), SolverKind::Basic, 10).with_record_every(3);
        let t = run(cfg).unwrap();
        let ks: Vec<u64> = t.records.iter().map(|r| r.k).collect();
        assert_eq!(ks, vec![0, 3, 6, 9]);
        assert_eq!(t.final_state.iter, 10);
        assert_eq!(t.messages, MessageStats { uplinks: 30, broadcasts: 10 });
    }

    #[test]
    fn first_record_is_initial_state() {
        let t = run(RunConfig::new(tiny(), SolverKind::Basic, 1)).unwrap();
        assert_eq!(t.records[0].thetas, vec![vec![0.0]; 3]);
        assert_eq!(t.records[0].lambda, vec![0.0]);
    }

    #[test]
    fn clean_basic_has_zero_perturbation() {
        let t = run(RunConfig::new(tiny(), SolverKind::Basic, 20)).unwrap();
        assert!(t.records.iter().all(|r| r.perturbation.e_k < 1e-24));
    }

    #[test]
    fn resume_without_memory_fails() {
        let mut t = run(RunConfig::new(tiny(), SolverKind::Basic, 2)).unwrap();
        t.coordinator = None;
        assert!(matches!(resume(t, 1).unwrap_err().error, PdraError::Argument(_)));
    }

    #[test]
    fn bad_initial_lambda() {
        let mut cfg = RunConfig::new(tiny(), SolverKind::Basic, 2);
        cfg.lambda0 = Some(vec![-1.0]);
        assert!(run(cfg).is_err());
    }

    #[test]
    fn csv_shape() {
        let t = run(RunConfig::new(tiny(), SolverKind::Basic, 2)).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&t, Some("# config_hash=x"), &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# config_hash=x");
        assert_eq!(lines[1], "iter,agent,compromised,theta_0,lambda_0,violation_0,e_k");
        assert_eq!(lines.len(), 2 + 2 * 3);
    }
}
