//! Compromised uplinks: who is attacked at iteration k, and what they send.
//!
//! Everything here is a pure function of (seed, k, agent), so schedules and
//! payloads can be regenerated at any iteration without carried state.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PdraError, Result};
use crate::problem::ProblemSpec;

const STREAM_SCHEDULE: u64 = 0x5c4e_d01e;
const STREAM_PAYLOAD: u64 = 0x9a71_0ad5;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based key for (seed, k, agent, stream).
pub fn counter_key(seed: u64, k: u64, agent: u64, stream: u64) -> u64 {
    splitmix(splitmix(splitmix(splitmix(seed) ^ k) ^ agent) ^ stream)
}

fn unit_draw(key: u64) -> f64 {
    (splitmix(key) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackSchedule {
    StaticSet { members: Vec<usize> },
    BernoulliDynamic { p: f64, seed: u64 },
    /// Agent i uses channel (i + k) mod n_channels at iteration k.
    RoundRobinDynamic { n_channels: usize, compromised_channels: Vec<usize> },
}

impl AttackSchedule {
    pub fn none() -> Self {
        AttackSchedule::StaticSet { members: Vec::new() }
    }

    pub fn validate(&self, n_agents: usize) -> Result<()> {
        match self {
            AttackSchedule::StaticSet { members } => {
                if let Some(&bad) = members.iter().find(|&&i| i >= n_agents) {
                    return Err(PdraError::Config(format!("attacked agent {bad} out of range")));
                }
                let mut u = members.clone();
                u.sort_unstable();
                u.dedup();
                if u.len() != members.len() {
                    return Err(PdraError::Config("duplicate attacked agent".into()));
                }
                if 2 * members.len() >= n_agents && !members.is_empty() {
                    return Err(PdraError::Config(format!(
                        "static attack on {} of {n_agents} agents; need |A|/N < 0.5",
                        members.len()
                    )));
                }
                Ok(())
            }
            AttackSchedule::BernoulliDynamic { p, .. } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(PdraError::Config(format!("attack probability {p} outside [0, 1]")));
                }
                Ok(())
            }
            AttackSchedule::RoundRobinDynamic { n_channels, compromised_channels } => {
                if *n_channels == 0 {
                    return Err(PdraError::Config("round-robin needs at least one channel".into()));
                }
                let mut u = compromised_channels.clone();
                u.sort_unstable();
                u.dedup();
                if u.len() != compromised_channels.len() || u.iter().any(|&c| c >= *n_channels) {
                    return Err(PdraError::Config("invalid compromised channel list".into()));
                }
                Ok(())
            }
        }
    }

    pub fn is_compromised(&self, agent: usize, k: u64) -> bool {
        match self {
            AttackSchedule::StaticSet { members } => members.contains(&agent),
            AttackSchedule::BernoulliDynamic { p, seed } => {
                *p > 0.0 && unit_draw(counter_key(*seed, k, agent as u64, STREAM_SCHEDULE)) < *p
            }
            AttackSchedule::RoundRobinDynamic { n_channels, compromised_channels } => {
                let ch = ((agent as u64 + k) % *n_channels as u64) as usize;
                compromised_channels.contains(&ch)
            }
        }
    }
}

/// A^(k), ascending.
pub fn compromised_set(sched: &AttackSchedule, n_agents: usize, k: u64) -> Vec<usize> {
    (0..n_agents).filter(|&i| sched.is_compromised(i, k)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdversaryStrategy {
    ConstantValue { v: Vec<f64> },
    UniformRandom { lo: Vec<f64>, hi: Vec<f64>, seed: u64 },
    ScaleTrue { factor: f64 },
    NegateTrue,
    /// Reports the upper corner of the agent's own feasible box.
    MaxConsume,
}

impl AdversaryStrategy {
    /// Uniform draws over the union box of the instance.
    pub fn uniform_over_box(spec: &ProblemSpec, seed: u64) -> Self {
        let (lo, hi) = spec.union_box();
        AdversaryStrategy::UniformRandom { lo, hi, seed }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            AdversaryStrategy::ConstantValue { v } if v.len() != dim => {
                Err(PdraError::Dimension { context: "constant adversary value", expected: dim, actual: v.len() })
            }
            AdversaryStrategy::UniformRandom { lo, hi, .. } => {
                if lo.len() != dim || hi.len() != dim {
                    return Err(PdraError::Dimension { context: "uniform adversary box", expected: dim, actual: lo.len() });
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
                    return Err(PdraError::Config("uniform adversary box must satisfy lo ≤ hi".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn payload(&self, spec: &ProblemSpec, agent: usize, theta: &[f64], k: u64) -> Vec<f64> {
        match self {
            AdversaryStrategy::ConstantValue { v } => v.clone(),
            AdversaryStrategy::UniformRandom { lo, hi, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(counter_key(*seed, k, agent as u64, STREAM_PAYLOAD));
                lo.iter()
                    .zip(hi)
                    .map(|(&a, &b)| if a < b { rng.gen_range(a..=b) } else { a })
                    .collect()
            }
            AdversaryStrategy::ScaleTrue { factor } => theta.iter().map(|v| factor * v).collect(),
            AdversaryStrategy::NegateTrue => theta.iter().map(|v| -v).collect(),
            AdversaryStrategy::MaxConsume => spec.feasible_sets[agent].upper().to_vec(),
        }
    }
}

/// Message r_i^(k) as it arrives, with the ground-truth flag. Solvers never
/// see this type; they receive an [`Inbox`].
#[derive(Debug, Clone, PartialEq)]
pub struct UplinkReport {
    pub agent: usize,
    pub payload: Vec<f64>,
    pub compromised: bool,
    /// Payload carries NaN or ±∞.
    pub nonfinite: bool,
}

/// The coordinator's view of one round: payloads by agent index, nothing else.
#[derive(Debug, Clone, PartialEq)]
pub struct Inbox {
    payloads: Vec<Vec<f64>>,
}

impl Inbox {
    pub fn from_reports(reports: &[UplinkReport]) -> Self {
        Inbox { payloads: reports.iter().map(|r| r.payload.clone()).collect() }
    }

    pub fn from_payloads(payloads: Vec<Vec<f64>>) -> Self {
        Inbox { payloads }
    }

    pub fn payloads(&self) -> &[Vec<f64>] {
        &self.payloads
    }

    pub fn len(&self) -> usize {
        self.payloads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payloads.is_empty()
    }

    pub fn any_nonfinite(&self) -> bool {
        self.payloads.iter().any(|p| !crate::vecops::all_finite(p))
    }
}

/// Applies the attack to the true parameters of round k.
pub fn corrupt(
    thetas: &[Vec<f64>],
    sched: &AttackSchedule,
    strategy: &AdversaryStrategy,
    k: u64,
    spec: &ProblemSpec,
) -> Vec<UplinkReport> {
    thetas
        .iter()
        .enumerate()
        .map(|(i, th)| {
            let compromised = sched.is_compromised(i, k);
            let payload = if compromised { strategy.payload(spec, i, th, k) } else { th.clone() };
            let nonfinite = !crate::vecops::all_finite(&payload);
            UplinkReport { agent: i, payload, compromised, nonfinite }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assumption2Report {
    pub pass: bool,
    /// ⌊α₂ m⌋: the largest admissible count per window.
    pub limit: usize,
    pub worst_agent: usize,
    pub worst_window_start: u64,
    pub worst_count: usize,
}

/// Counts compromised slots of every agent over every full window of m
/// consecutive iterations in [0, horizon).
pub fn validate_assumption2(
    sched: &AttackSchedule,
    n_agents: usize,
    horizon: u64,
    m: usize,
    alpha2: f64,
) -> Result<Assumption2Report> {
    if m == 0 || horizon < m as u64 {
        return Err(PdraError::Argument(format!("need 1 ≤ m ≤ horizon, got m={m}, horizon={horizon}")));
    }
    let limit = (alpha2 * m as f64 + 1e-9).floor() as usize;
    let mut worst = (0usize, 0u64, 0usize);
    for i in 0..n_agents {
        let flags: Vec<bool> = (0..horizon).map(|k| sched.is_compromised(i, k)).collect();
        let mut count = flags[..m].iter().filter(|&&f| f).count();
        let mut best = (count, 0u64);
        for s in 1..=(horizon as usize - m) {
            count = count + flags[s + m - 1] as usize - flags[s - 1] as usize;
            if count > best.0 {
                best = (count, s as u64);
            }
        }
        if best.0 > worst.2 || i == 0 {
            worst = (i, best.1, best.0);
        }
    }
    Ok(Assumption2Report {
        pass: worst.2 <= limit,
        limit,
        worst_agent: worst.0,
        worst_window_start: worst.1,
        worst_count: worst.2,
    })
}

/// Schedule dump with columns `iteration,agent,compromised`.
pub fn export_schedule_csv<W: Write>(sched: &AttackSchedule, n_agents: usize, horizon: u64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| PdraError::Config(format!("schedule export failed: {e}"));
    w.write_record(["iteration", "agent", "compromised"]).map_err(io)?;
    for k in 0..horizon {
        for i in 0..n_agents {
            let c = sched.is_compromised(i, k) as u8;
            w.write_record([k.to_string(), i.to_string(), c.to_string()]).map_err(io)?;
        }
    }
    w.flush().map_err(|e| PdraError::Config(e.to_string()))?;
    Ok(())
}
