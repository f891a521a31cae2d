//! Experiment configuration (TOML).
//!
//! ```toml
//! [problem]
//! kind = "ev"                 # running_example | ev | powernet | file
//! n_agents = 100
//! horizon = 4
//! instance_seed = 1
//! upsilon = 0.05
//!
//! [solver]
//! kind = "averaging"          # basic | robust | averaging | hybrid
//! window = 20
//! alpha2 = 0.45
//! gamma = 1.0                 # omit for the solver's stable-step rule
//! step_policy = "empirical"   # "proven" (default) fails validation above the rule
//!
//! [attack]
//! schedule = "bernoulli"      # none | static | bernoulli | round_robin
//! p = 0.1
//! strategy = "uniform"        # constant | uniform | scale | negate | max_consume
//!
//! [run]
//! iters = 6000
//! seed = 1
//! record_every = 10
//!
//! [oracle]
//! enabled = true
//! tol = 1e-9
//!
//! [sweep]
//! alpha1 = [0.2, 0.3]
//! seeds = [1, 2, 3, 4, 5]
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Relative paths (`problem.network_dir`, `problem.path`) resolve against
//! the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pdra_core::attack::{AdversaryStrategy, AttackSchedule};
use pdra_core::problem::instance_file::load_instance;
use pdra_core::problem::ProblemSpec;
use pdra_core::problems::{gen_ev_instance, gen_powernet_instance, load_network_data, running_example_with, EvInstanceParams, PowerNetParams};
use pdra_core::sim::RunConfig;
use pdra_core::solvers::{max_stable_step, SolverKind};
use pdra_core::Exec;

use crate::CliError;

/// Default cap on the number of sweep cells.
pub const DEFAULT_MAX_CELLS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    RunningExample {
        upsilon: f64,
    },
    Ev {
        n_agents: usize,
        horizon: usize,
        instance_seed: u64,
        upsilon: f64,
    },
    Powernet {
        network_dir: PathBuf,
        upsilon: f64,
        #[serde(default)]
        instance_seed: u64,
    },
    File {
        path: PathBuf,
        /// Replaces the file's υ when set.
        #[serde(default)]
        upsilon: Option<f64>,
    },
}

impl ProblemConfig {
    pub fn upsilon(&self) -> Option<f64> {
        match self {
            ProblemConfig::RunningExample { upsilon }
            | ProblemConfig::Ev { upsilon, .. }
            | ProblemConfig::Powernet { upsilon, .. } => Some(*upsilon),
            ProblemConfig::File { upsilon, .. } => *upsilon,
        }
    }

    pub fn set_upsilon(&mut self, u: f64) {
        match self {
            ProblemConfig::RunningExample { upsilon }
            | ProblemConfig::Ev { upsilon, .. }
            | ProblemConfig::Powernet { upsilon, .. } => *upsilon = u,
            ProblemConfig::File { upsilon, .. } => *upsilon = Some(u),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SolverName {
    Basic,
    Robust,
    Averaging,
    Hybrid,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepPolicy {
    /// γ must satisfy the solver's stable-step rule.
    #[default]
    Proven,
    /// γ above the rule is reported as a warning.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverName,
    #[serde(default)]
    pub alpha1: Option<f64>,
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default)]
    pub alpha2: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub step_policy: StepPolicy,
}

impl SolverConfig {
    pub fn to_kind(&self) -> Result<SolverKind, CliError> {
        let need = |v: Option<f64>, what: &str| v.ok_or_else(|| CliError::Validation(format!("solver.{what} is required")));
        let need_w = || self.window.ok_or_else(|| CliError::Validation("solver.window is required".into()));
        Ok(match self.kind {
            SolverName::Basic => SolverKind::Basic,
            SolverName::Robust => SolverKind::RobustStatic { alpha1: need(self.alpha1, "alpha1")? },
            SolverName::Averaging => SolverKind::AveragingDynamic { window: need_w()?, alpha2: need(self.alpha2, "alpha2")? },
            SolverName::Hybrid => SolverKind::Hybrid {
                alpha1: need(self.alpha1, "alpha1")?,
                window: need_w()?,
                alpha2: need(self.alpha2, "alpha2")?,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    #[default]
    None,
    Static,
    Bernoulli,
    RoundRobin,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Constant,
    #[default]
    Uniform,
    Scale,
    Negate,
    MaxConsume,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default)]
    pub schedule: ScheduleName,
    /// Static set members.
    #[serde(default)]
    pub members: Vec<usize>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub n_channels: Option<usize>,
    #[serde(default)]
    pub compromised_channels: Vec<usize>,
    #[serde(default)]
    pub strategy: StrategyName,
    /// Payload for `constant`.
    #[serde(default)]
    pub value: Vec<f64>,
    /// Factor for `scale`.
    #[serde(default)]
    pub factor: Option<f64>,
}

impl AttackConfig {
    fn schedule(&self) -> Result<AttackSchedule, CliError> {
        Ok(match self.schedule {
            ScheduleName::None => AttackSchedule::none(),
            ScheduleName::Static => AttackSchedule::StaticSet { members: self.members.clone() },
            ScheduleName::Bernoulli => AttackSchedule::BernoulliDynamic {
                p: self.p.ok_or_else(|| CliError::Validation("attack.p is required".into()))?,
                seed: 0,
            },
            ScheduleName::RoundRobin => AttackSchedule::RoundRobinDynamic {
                n_channels: self.n_channels.ok_or_else(|| CliError::Validation("attack.n_channels is required".into()))?,
                compromised_channels: self.compromised_channels.clone(),
            },
        })
    }

    fn strategy(&self, spec: &ProblemSpec) -> Result<AdversaryStrategy, CliError> {
        Ok(match self.strategy {
            StrategyName::Constant => AdversaryStrategy::ConstantValue { v: self.value.clone() },
            StrategyName::Uniform => AdversaryStrategy::uniform_over_box(spec, 0),
            StrategyName::Scale => AdversaryStrategy::ScaleTrue {
                factor: self.factor.ok_or_else(|| CliError::Validation("attack.factor is required".into()))?,
            },
            StrategyName::Negate => AdversaryStrategy::NegateTrue,
            StrategyName::MaxConsume => AdversaryStrategy::MaxConsume,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub iters: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub record_every: u64,
    #[serde(default)]
    pub exec: Exec,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Explicit oracle step; the default is υ/L_Φ².
    #[serde(default)]
    pub gamma: Option<f64>,
}

fn yes() -> bool {
    true
}

fn default_tol() -> f64 {
    1e-9
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { enabled: true, tol: default_tol(), gamma: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub alpha1: Vec<f64>,
    #[serde(default)]
    pub p: Vec<f64>,
    #[serde(default)]
    pub window: Vec<usize>,
    #[serde(default)]
    pub alpha2: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_cap")]
    pub max_cells: usize,
}

fn default_cap() -> usize {
    DEFAULT_MAX_CELLS
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { alpha1: vec![], p: vec![], window: vec![], alpha2: vec![], seeds: vec![], max_cells: DEFAULT_MAX_CELLS }
    }
}

impl SweepConfig {
    pub fn is_empty(&self) -> bool {
        self.alpha1.is_empty() && self.p.is_empty() && self.window.is_empty() && self.alpha2.is_empty() && self.seeds.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_out() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    pub run: RunSection,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory relative paths resolve against. Not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line overrides, applied after the file or preset is loaded.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iters: Option<u64>,
    pub out: Option<PathBuf>,
    pub solver: Option<SolverName>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub window: Option<usize>,
    pub gamma: Option<f64>,
    pub upsilon: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
        if let Some(i) = o.iters {
            self.run.iters = i;
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
        if let Some(k) = o.solver {
            self.solver.kind = k;
        }
        if let Some(a) = o.alpha1 {
            self.solver.alpha1 = Some(a);
        }
        if let Some(a) = o.alpha2 {
            self.solver.alpha2 = Some(a);
        }
        if let Some(w) = o.window {
            self.solver.window = Some(w);
        }
        if let Some(g) = o.gamma {
            self.solver.gamma = Some(g);
        }
        if let Some(u) = o.upsilon {
            self.problem.set_upsilon(u);
        }
    }

    /// sha256 of the canonical JSON form (output directory excluded, so
    /// the same experiment hashes alike wherever it is written).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn build_spec(&self) -> Result<ProblemSpec, CliError> {
        let spec = match &self.problem {
            ProblemConfig::RunningExample { upsilon } => running_example_with(*upsilon, None)?,
            ProblemConfig::Ev { n_agents, horizon, instance_seed, upsilon } => {
                let mut p = EvInstanceParams::standard(*n_agents, *horizon, *instance_seed);
                p.upsilon = *upsilon;
                gen_ev_instance(&p)?
            }
            ProblemConfig::Powernet { network_dir, upsilon, instance_seed } => {
                let net = load_network_data(&self.resolve(network_dir))?;
                gen_powernet_instance(&PowerNetParams::new(net, *upsilon, *instance_seed))?
            }
            ProblemConfig::File { path, upsilon } => {
                let s = load_instance(&self.resolve(path))?;
                match upsilon {
                    Some(u) => s.with_upsilon(*u)?,
                    None => s,
                }
            }
        };
        let kind = self.solver.to_kind()?;
        let gamma = match self.solver.gamma {
            Some(g) => g,
            None => max_stable_step(&spec, &kind)?.gamma,
        };
        Ok(spec.with_gamma(gamma)?)
    }

    /// The core run description for this experiment (no oracle reference).
    pub fn build_run(&self) -> Result<RunConfig, CliError> {
        if self.run.iters == 0 {
            return Err(CliError::Validation("run.iters must be ≥ 1".into()));
        }
        let spec = self.build_spec()?;
        let kind = self.solver.to_kind()?;
        let schedule = self.attack.schedule()?;
        let strategy = self.attack.strategy(&spec)?;
        let cfg = RunConfig::new(spec, kind, self.run.iters)
            .with_attack(schedule, strategy)
            .with_record_every(self.run.record_every)
            .with_exec(self.run.exec)
            .reseed(self.run.seed);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
[problem]
kind = "running_example"
upsilon = 0.001

[solver]
kind = "basic"
gamma = 0.2

[run]
iters = 10
"#;

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::from_toml(SMALL, Path::new(".")).unwrap();
        assert_eq!(c.run.record_every, 1);
        assert!(c.oracle.enabled);
        assert!(c.sweep.is_empty());
        let r = c.build_run().unwrap();
        assert_eq!(r.spec.reg.gamma, 0.2);
    }

    #[test]
    fn unknown_key_rejected() {
        let bad = SMALL.replace("iters = 10", "iters = 10\nspeed = 3");
        assert!(ExperimentConfig::from_toml(&bad, Path::new(".")).is_err());
    }

    #[test]
    fn hash_ignores_output_dir_but_not_seed() {
        let a = ExperimentConfig::from_toml(SMALL, Path::new(".")).unwrap();
        let mut b = a.clone();
        b.output.dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.run.seed = 9;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn toml_round_trip() {
        let a = ExperimentConfig::from_toml(SMALL, Path::new(".")).unwrap();
        let b = ExperimentConfig::from_toml(&a.to_toml(), Path::new(".")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overrides_apply() {
        let mut c = ExperimentConfig::from_toml(SMALL, Path::new(".")).unwrap();
        c.apply(&Overrides { iters: Some(0), upsilon: Some(0.5), solver: Some(SolverName::Robust), ..Default::default() });
        assert_eq!(c.problem.upsilon(), Some(0.5));
        assert!(matches!(c.build_run(), Err(CliError::Validation(_))));
        c.run.iters = 5;
        assert!(c.build_run().is_err(), "robust without α₁");
    }
}
