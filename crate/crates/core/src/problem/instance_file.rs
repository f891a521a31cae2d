//! Plain-text instance files (TOML).
//!
//! ```toml
//! upsilon = 0.001
//! gamma = 0.0002              # optional, defaults to υ/(4 L_Φ²)
//! closed_form_lipschitz = true # optional, quadratic/linear instances only
//!
//! [[agent]]
//! count = 3                   # optional replication, default 1
//! cost = { family = "quadratic", a = [1.0], c = [10.0] }
//! set = { kind = "box", lower = [0.0], upper = [7.0] }
//!
//! [[agent]]
//! count = 2
//! cost = { family = "quadratic", a = [1.0], c = [10.0] }
//! set = { kind = "box", lower = [0.0], upper = [10.0] }
//!
//! [[constraint]]
//! family = "linear"
//! w = [1.0]
//! b = 5.0
//! ```
//!
//! Cost families: `zero`, `quadratic {a, c}`, `neg_log {beta}`,
//! `exponential {w, c}`. Constraint families: `linear {w, b}`,
//! `quadratic {q, w, b}`. Set kinds: `box {lower, upper}`,
//! `box_with_sum_slab {lower, upper, sum_min, sum_max}`.

use std::path::Path;

use serde::Deserialize;
use toml::Spanned;

use super::{validate_agent, Constraint, Cost, FeasibleSet, ProblemSpec};
use crate::error::{PdraError, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    upsilon: f64,
    gamma: Option<f64>,
    #[serde(default)]
    closed_form_lipschitz: bool,
    #[serde(default)]
    agent: Vec<Spanned<AgentEntry>>,
    #[serde(default)]
    constraint: Vec<Spanned<Constraint>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentEntry {
    #[serde(default = "one")]
    count: usize,
    cost: Cost,
    set: FeasibleSet,
}

fn one() -> usize {
    1
}

pub(crate) fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

pub fn load_instance(path: &Path) -> Result<ProblemSpec> {
    let label = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| PdraError::Ingestion {
        path: label.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    parse_instance(&text, &label)
}

pub fn parse_instance(text: &str, label: &str) -> Result<ProblemSpec> {
    let err = |line: usize, message: String| PdraError::Ingestion { path: label.to_string(), line, message };
    let file: InstanceFile = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
        err(line, e.message().to_string())
    })?;
    if file.agent.is_empty() {
        return Err(err(1, "no [[agent]] sections".into()));
    }
    if file.constraint.is_empty() {
        return Err(err(1, "no [[constraint]] sections".into()));
    }
    let dim = file.agent[0].get_ref().set.dim();
    let mut costs = Vec::new();
    let mut sets = Vec::new();
    for entry in &file.agent {
        let line = line_of(text, entry.span().start);
        let a = entry.get_ref();
        if a.count == 0 {
            return Err(err(line, "agent count must be ≥ 1".into()));
        }
        validate_agent(&a.cost, &a.set, dim).map_err(|m| err(line, m))?;
        for _ in 0..a.count {
            costs.push(a.cost.clone());
            sets.push(a.set.clone());
        }
    }
    let mut constraints = Vec::new();
    for c in &file.constraint {
        let line = line_of(text, c.span().start);
        if matches!(c.get_ref(), Constraint::Scaled { .. }) {
            return Err(err(line, "scaled constraints are derived, not declared".into()));
        }
        c.get_ref().validate(dim).map_err(|m| err(line, m))?;
        constraints.push(c.get_ref().clone());
    }
    let spec = ProblemSpec::new(costs, constraints, sets, file.upsilon, file.gamma)
        .map_err(|e| err(1, e.to_string()))?;
    if file.closed_form_lipschitz {
        spec.with_closed_form_lipschitz().map_err(|e| err(1, e.to_string()))
    } else {
        Ok(spec)
    }
}
