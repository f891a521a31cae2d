//! Power network with flexible loads and generators.
//!
//! Every agent owns one bus coordinate of a vector in R^{n_buses}: loads
//! hold +d_i, generators hold −g_i, so Σ_i θ_i = d − g. The balance
//! 1ᵀ(d − g) = 0 is split into two inequalities and the flows H(d − g) ≤ c
//! become one linear constraint per row.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PdraError, Result};
use crate::problem::{Constraint, Cost, FeasibleSet, ProblemSpec, LOG_FLOOR};

/// Generator coefficients used when a bus does not give one.
pub const DEFAULT_GEN_COEFFS: [f64; 3] = [0.01, 0.011, 0.012];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusRole {
    Load,
    Generator,
    Both,
    None,
}

impl BusRole {
    pub fn has_load(self) -> bool {
        matches!(self, BusRole::Load | BusRole::Both)
    }

    pub fn has_generator(self) -> bool {
        matches!(self, BusRole::Generator | BusRole::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadBus {
    /// Utility weight; drawn from U[500, 1000] when absent.
    pub beta: Option<f64>,
    pub d_min: f64,
    pub d_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenBus {
    /// Cost coefficient per MW; the i-th generator defaults to
    /// [`DEFAULT_GEN_COEFFS`]`[i]`.
    pub c: Option<f64>,
    pub g_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    pub id: i64,
    pub role: BusRole,
    pub load: Option<LoadBus>,
    pub generator: Option<GenBus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub reactance: f64,
    pub flow_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkData {
    pub buses: Vec<BusRecord>,
    /// Acts on d − g; one row per constraint.
    pub h: Vec<Vec<f64>>,
    pub limits: Vec<f64>,
    pub n_branches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerNetParams {
    pub network: NetworkData,
    /// Quantities are per unit of this many MW; generator coefficients are
    /// given per MW and converted.
    pub power_base: f64,
    /// Positive factor applied to every cost. Leaves the minimizer unchanged.
    pub cost_scale: f64,
    pub upsilon: f64,
    #[serde(default)]
    pub gamma: Option<f64>,
    pub seed: u64,
}

impl PowerNetParams {
    /// Per-unit quantities on a 100 MW base with costs scaled by 1/100.
    pub fn new(network: NetworkData, upsilon: f64, seed: u64) -> Self {
        PowerNetParams { network, power_base: 100.0, cost_scale: 0.01, upsilon, gamma: None, seed }
    }
}

const DEFAULT_D_MIN: f64 = 1.0;
const DEFAULT_D_MAX: f64 = 10.0;
const DEFAULT_G_MAX: f64 = 6.0;

pub fn gen_powernet_instance(p: &PowerNetParams) -> Result<ProblemSpec> {
    let net = &p.network;
    let nb = net.buses.len();
    if nb == 0 {
        return Err(PdraError::Instance("network has no buses".into()));
    }
    if net.h.len() != net.limits.len() {
        return Err(PdraError::Dimension { context: "flow limits", expected: net.h.len(), actual: net.limits.len() });
    }
    if let Some((r, row)) = net.h.iter().enumerate().find(|(_, row)| row.len() != nb) {
        return Err(PdraError::Instance(format!("H row {r} has {} columns, expected {nb}", row.len())));
    }
    if !(p.power_base > 0.0 && p.cost_scale > 0.0) {
        return Err(PdraError::Config("power_base and cost_scale must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut costs = Vec::new();
    let mut sets = Vec::new();
    let mut gen_idx = 0;
    for (b, bus) in net.buses.iter().enumerate() {
        if bus.role.has_load() {
            let l = bus.load.clone().unwrap_or(LoadBus { beta: None, d_min: DEFAULT_D_MIN, d_max: DEFAULT_D_MAX });
            let beta = match l.beta {
                Some(v) => v,
                None => rng.gen_range(500.0..=1000.0),
            };
            let mut w = vec![0.0; nb];
            w[b] = p.cost_scale * beta;
            let (mut lo, mut hi) = (vec![0.0; nb], vec![0.0; nb]);
            lo[b] = l.d_min.max(LOG_FLOOR);
            hi[b] = l.d_max;
            costs.push(Cost::NegLog { beta: w });
            sets.push(FeasibleSet::new_log_domain(FeasibleSet::Box { lower: lo, upper: hi }).map_err(|e| {
                PdraError::Instance(format!("load at bus {}: {e}", bus.id))
            })?);
        }
        if bus.role.has_generator() {
            let g = bus.generator.clone().unwrap_or(GenBus { c: None, g_max: DEFAULT_G_MAX });
            let c = g.c.unwrap_or_else(|| {
                DEFAULT_GEN_COEFFS.get(gen_idx).copied().unwrap_or(0.01 + 0.001 * gen_idx as f64)
            });
            gen_idx += 1;
            let (mut w, mut cc) = (vec![0.0; nb], vec![0.0; nb]);
            w[b] = p.cost_scale;
            cc[b] = -c * p.power_base;
            let mut lo = vec![0.0; nb];
            lo[b] = -g.g_max;
            costs.push(Cost::Exponential { w, c: cc });
            sets.push(FeasibleSet::new_box(lo, vec![0.0; nb]).map_err(|e| {
                PdraError::Instance(format!("generator at bus {}: {e}", bus.id))
            })?);
        }
    }
    if costs.is_empty() {
        return Err(PdraError::Instance("network has no loads or generators".into()));
    }
    // Written on θ̄ = (d − g)/N: ±1ᵀθ̄ ≤ 0 and Hθ̄ ≤ c/N.
    let n = costs.len() as f64;
    let mut constraints = vec![
        Constraint::Linear { w: vec![1.0; nb], b: 0.0 },
        Constraint::Linear { w: vec![-1.0; nb], b: 0.0 },
    ];
    for (row, &c) in net.h.iter().zip(&net.limits) {
        constraints.push(Constraint::Linear { w: row.clone(), b: c / n });
    }
    ProblemSpec::new(costs, constraints, sets, p.upsilon, p.gamma)
}

/// 1ᵀ(d − g) for a power-network iterate.
pub fn balance_residual(thetas: &[Vec<f64>]) -> f64 {
    thetas.iter().flatten().sum()
}

/// Injection PTDF (branch × bus) from the DC approximation, first bus as
/// slack: flows = B_f · [0; B_r⁻¹] · injections.
pub fn dc_ptdf(n_buses: usize, branches: &[Branch]) -> Result<Vec<Vec<f64>>> {
    if n_buses < 2 {
        return Err(PdraError::Instance("PTDF needs at least two buses".into()));
    }
    if branches.is_empty() {
        return Err(PdraError::Instance("network has no branches".into()));
    }
    let mut bbus = DMatrix::<f64>::zeros(n_buses, n_buses);
    let mut bf = DMatrix::<f64>::zeros(branches.len(), n_buses);
    for (l, br) in branches.iter().enumerate() {
        if br.from >= n_buses || br.to >= n_buses || br.from == br.to {
            return Err(PdraError::Instance(format!("branch {l} has invalid endpoints")));
        }
        if !(br.reactance > 0.0) {
            return Err(PdraError::Instance(format!("branch {l} needs positive reactance")));
        }
        let y = 1.0 / br.reactance;
        bbus[(br.from, br.from)] += y;
        bbus[(br.to, br.to)] += y;
        bbus[(br.from, br.to)] -= y;
        bbus[(br.to, br.from)] -= y;
        bf[(l, br.from)] = y;
        bf[(l, br.to)] = -y;
    }
    let reduced = bbus.view((1, 1), (n_buses - 1, n_buses - 1)).into_owned();
    let inv = reduced
        .try_inverse()
        .ok_or_else(|| PdraError::Instance("network is disconnected (singular susceptance matrix)".into()))?;
    let mut full = DMatrix::<f64>::zeros(n_buses, n_buses);
    full.view_mut((1, 1), (n_buses - 1, n_buses - 1)).copy_from(&inv);
    let p = bf * full;
    Ok((0..p.nrows()).map(|r| p.row(r).iter().copied().collect()).collect())
}

/// H = [−P; P] and c = [limits; limits]: flows in both directions, with H
/// acting on d − g (withdrawals) rather than on injections.
pub fn network_from_branches(buses: Vec<BusRecord>, branches: &[Branch]) -> Result<NetworkData> {
    let p = dc_ptdf(buses.len(), branches)?;
    let mut h: Vec<Vec<f64>> = p.iter().map(|r| r.iter().map(|v| if *v == 0.0 { 0.0 } else { -v }).collect()).collect();
    h.extend(p.iter().cloned());
    let mut limits: Vec<f64> = branches.iter().map(|b| b.flow_limit).collect();
    limits.extend(branches.iter().map(|b| b.flow_limit));
    Ok(NetworkData { buses, h, limits, n_branches: branches.len() })
}

fn ingest(path: &Path, line: u64, message: impl Into<String>) -> PdraError {
    PdraError::Ingestion { path: path.display().to_string(), line: line as usize, message: message.into() }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let meta = std::fs::metadata(path).map_err(|e| ingest(path, 0, e.to_string()))?;
    if meta.len() == 0 {
        return Err(ingest(path, 0, "file is empty"));
    }
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| ingest(path, 0, e.to_string()))
}

fn records(path: &Path, width: Option<usize>) -> Result<Vec<(u64, Vec<String>)>> {
    let mut rdr = open_csv(path)?;
    let header_len = rdr.headers().map_err(|e| ingest(path, 1, e.to_string()))?.len();
    let want = width.unwrap_or(header_len);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ingest(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != want {
            return Err(ingest(path, line, format!("expected {want} columns, found {}", rec.len())));
        }
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    if out.is_empty() {
        return Err(ingest(path, 1, "no data rows"));
    }
    Ok(out)
}

fn num(path: &Path, line: u64, what: &str, s: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| ingest(path, line, format!("{what}: cannot parse {s:?} as a number")))?;
    if !v.is_finite() {
        return Err(ingest(path, line, format!("{what} must be finite")));
    }
    Ok(v)
}

/// `bus_id,role,params` with params a `;`-separated `key=value` list
/// (beta, d_min, d_max, c, g_max).
pub fn read_buses(path: &Path) -> Result<Vec<BusRecord>> {
    let mut out: Vec<BusRecord> = Vec::new();
    for (line, row) in records(path, Some(3))? {
        let id: i64 = row[0].parse().map_err(|_| ingest(path, line, format!("bad bus id {:?}", row[0])))?;
        if out.iter().any(|b| b.id == id) {
            return Err(ingest(path, line, format!("duplicate bus id {id}")));
        }
        let role = match row[1].to_ascii_lowercase().as_str() {
            "load" => BusRole::Load,
            "generator" | "gen" => BusRole::Generator,
            "both" => BusRole::Both,
            "none" | "" => BusRole::None,
            other => return Err(ingest(path, line, format!("unknown role {other:?}"))),
        };
        let mut kv: HashMap<String, f64> = HashMap::new();
        for item in row[2].split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| ingest(path, line, format!("parameter {item:?} is not key=value")))?;
            let k = k.trim();
            if !["beta", "d_min", "d_max", "c", "g_max"].contains(&k) {
                return Err(ingest(path, line, format!("unknown parameter {k:?}")));
            }
            kv.insert(k.to_string(), num(path, line, k, v.trim())?);
        }
        let load = role.has_load().then(|| LoadBus {
            beta: kv.get("beta").copied(),
            d_min: kv.get("d_min").copied().unwrap_or(DEFAULT_D_MIN),
            d_max: kv.get("d_max").copied().unwrap_or(DEFAULT_D_MAX),
        });
        let generator = role.has_generator().then(|| GenBus {
            c: kv.get("c").copied(),
            g_max: kv.get("g_max").copied().unwrap_or(DEFAULT_G_MAX),
        });
        out.push(BusRecord { id, role, load, generator });
    }
    Ok(out)
}

/// `from,to,reactance,flow_limit`, endpoints by bus id.
pub fn read_branches(path: &Path, buses: &[BusRecord]) -> Result<Vec<Branch>> {
    let index: HashMap<i64, usize> = buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let mut out = Vec::new();
    for (line, row) in records(path, Some(4))? {
        let end = |s: &str| -> Result<usize> {
            let id: i64 = s.parse().map_err(|_| ingest(path, line, format!("bad bus id {s:?}")))?;
            index.get(&id).copied().ok_or_else(|| ingest(path, line, format!("unknown bus {id}")))
        };
        let from = end(&row[0])?;
        let to = end(&row[1])?;
        if from == to {
            return Err(ingest(path, line, "branch connects a bus to itself"));
        }
        let reactance = num(path, line, "reactance", &row[2])?;
        if reactance <= 0.0 {
            return Err(ingest(path, line, "reactance must be positive"));
        }
        let flow_limit = num(path, line, "flow_limit", &row[3])?;
        if flow_limit <= 0.0 {
            return Err(ingest(path, line, "flow_limit must be positive"));
        }
        out.push(Branch { from, to, reactance, flow_limit });
    }
    Ok(out)
}

/// Dense matrix with one column per bus and a header row.
pub fn read_ptdf(path: &Path, n_buses: usize) -> Result<Vec<Vec<f64>>> {
    records(path, Some(n_buses))?
        .into_iter()
        .map(|(line, row)| row.iter().map(|s| num(path, line, "PTDF entry", s)).collect())
        .collect()
}

pub fn read_limits(path: &Path) -> Result<Vec<f64>> {
    records(path, Some(1))?
        .into_iter()
        .map(|(line, row)| num(path, line, "limit", &row[0]))
        .collect()
}

/// Reads `buses.csv` plus either `ptdf.csv` and `limits.csv` (used as
/// given) or `branches.csv` (PTDF derived).
pub fn load_network_data(dir: &Path) -> Result<NetworkData> {
    let buses = read_buses(&dir.join("buses.csv"))?;
    let ptdf = dir.join("ptdf.csv");
    if ptdf.exists() {
        let h = read_ptdf(&ptdf, buses.len())?;
        let lp = dir.join("limits.csv");
        let limits = read_limits(&lp)?;
        if limits.len() != h.len() {
            return Err(ingest(&lp, limits.len() as u64 + 1, format!("{} limits for {} PTDF rows", limits.len(), h.len())));
        }
        let n_branches = h.len();
        return Ok(NetworkData { buses, h, limits, n_branches });
    }
    load_network_from_branches(dir, buses)
}

/// Always derives the PTDF from `branches.csv`.
pub fn load_network_from_branches(dir: &Path, buses: Vec<BusRecord>) -> Result<NetworkData> {
    let branches = read_branches(&dir.join("branches.csv"), &buses)?;
    network_from_branches(buses, &branches)
}
