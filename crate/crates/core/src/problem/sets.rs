use serde::{Deserialize, Serialize};

use crate::error::{PdraError, Result};

/// Tolerance on the Dykstra iterate change.
pub const DYKSTRA_TOL: f64 = 1e-10;
pub const DYKSTRA_MAX_SWEEPS: usize = 1000;
/// Slack accepted by membership checks.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Agent feasible set C_i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeasibleSet {
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// Box intersected with `sum_min ≤ Σ_j x_j ≤ sum_max`.
    BoxWithSumSlab {
        lower: Vec<f64>,
        upper: Vec<f64>,
        sum_min: f64,
        sum_max: f64,
    },
}

impl FeasibleSet {
    /// Box that must contain the origin.
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let s = FeasibleSet::Box { lower, upper };
        s.validate(true)?;
        Ok(s)
    }

    pub fn new_slab(lower: Vec<f64>, upper: Vec<f64>, sum_min: f64, sum_max: f64) -> Result<Self> {
        let s = FeasibleSet::BoxWithSumSlab { lower, upper, sum_min, sum_max };
        s.validate(true)?;
        Ok(s)
    }

    /// Set for a log-domain cost: the origin cannot be a member, so the
    /// origin check is replaced by a strictly positive floor on every
    /// coordinate the cost acts on (checked by `ProblemSpec`).
    pub fn new_log_domain(set: FeasibleSet) -> Result<Self> {
        set.validate(false)?;
        Ok(set)
    }

    pub fn lower(&self) -> &[f64] {
        match self {
            FeasibleSet::Box { lower, .. } | FeasibleSet::BoxWithSumSlab { lower, .. } => lower,
        }
    }

    pub fn upper(&self) -> &[f64] {
        match self {
            FeasibleSet::Box { upper, .. } | FeasibleSet::BoxWithSumSlab { upper, .. } => upper,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower().len()
    }

    pub fn validate(&self, require_origin: bool) -> Result<()> {
        let (lo, hi) = (self.lower(), self.upper());
        if lo.len() != hi.len() {
            return Err(PdraError::Dimension {
                context: "feasible set bounds",
                expected: lo.len(),
                actual: hi.len(),
            });
        }
        if lo.is_empty() {
            return Err(PdraError::Instance("feasible set has dimension 0".into()));
        }
        for j in 0..lo.len() {
            if !(lo[j].is_finite() && hi[j].is_finite()) {
                return Err(PdraError::Instance(format!("non-finite bound at coordinate {j}")));
            }
            if lo[j] > hi[j] {
                return Err(PdraError::Instance(format!(
                    "lower bound {} exceeds upper bound {} at coordinate {j}",
                    lo[j], hi[j]
                )));
            }
        }
        if let FeasibleSet::BoxWithSumSlab { sum_min, sum_max, .. } = self {
            if !(sum_min.is_finite() && sum_max.is_finite()) || sum_min > sum_max {
                return Err(PdraError::Instance(format!(
                    "sum slab [{sum_min}, {sum_max}] is empty or non-finite"
                )));
            }
            let smin: f64 = lo.iter().sum();
            let smax: f64 = hi.iter().sum();
            if *sum_max < smin || *sum_min > smax {
                return Err(PdraError::Instance(format!(
                    "sum slab [{sum_min}, {sum_max}] does not meet the box sum range [{smin}, {smax}]"
                )));
            }
        }
        if require_origin && !self.contains(&vec![0.0; lo.len()], 0.0) {
            return Err(PdraError::Instance("feasible set does not contain the origin".into()));
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        let (lo, hi) = (self.lower(), self.upper());
        if x.len() != lo.len() {
            return false;
        }
        let in_box = (0..x.len()).all(|j| x[j] >= lo[j] - tol && x[j] <= hi[j] + tol);
        match self {
            FeasibleSet::Box { .. } => in_box,
            FeasibleSet::BoxWithSumSlab { sum_min, sum_max, .. } => {
                let s: f64 = x.iter().sum();
                in_box && s >= sum_min - tol && s <= sum_max + tol
            }
        }
    }

    /// Euclidean diameter bound (the box diagonal).
    pub fn diameter(&self) -> f64 {
        crate::vecops::dist(self.lower(), self.upper())
    }

    /// Largest norm of a member (bounded by the farthest box corner).
    pub fn max_norm(&self) -> f64 {
        let (lo, hi) = (self.lower(), self.upper());
        (0..lo.len())
            .map(|j| lo[j].abs().max(hi[j].abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean projection P_C(point).
    pub fn project(&self, point: &[f64]) -> Result<Vec<f64>> {
        let mut out = point.to_vec();
        self.project_in_place(&mut out)?;
        Ok(out)
    }

    pub fn project_in_place(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(PdraError::Dimension {
                context: "projection",
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let (lo, hi) = (self.lower(), self.upper());
        let raw = match self {
            FeasibleSet::Box { .. } => None,
            FeasibleSet::BoxWithSumSlab { .. } => Some(x.to_vec()),
        };
        clamp_box(x, lo, hi);
        match self {
            FeasibleSet::Box { .. } => Ok(()),
            FeasibleSet::BoxWithSumSlab { sum_min, sum_max, .. } => {
                let s: f64 = x.iter().sum();
                if s >= *sum_min && s <= *sum_max {
                    // the box projection already lies in the slab
                    return Ok(());
                }
                let raw = raw.expect("raw point kept for slab sets");
                match dykstra(raw.clone(), lo, hi, *sum_min, *sum_max, x) {
                    Err(PdraError::Invariant(_)) => shift_projection(&raw, lo, hi, *sum_min, *sum_max, x),
                    r => r,
                }
            }
        }
    }
}

fn clamp_box(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for j in 0..x.len() {
        x[j] = x[j].clamp(lo[j], hi[j]);
    }
}

fn project_slab(x: &mut [f64], sum_min: f64, sum_max: f64) {
    let s: f64 = x.iter().sum();
    let target = s.clamp(sum_min, sum_max);
    if target != s {
        let shift = (target - s) / x.len() as f64;
        x.iter_mut().for_each(|v| *v += shift);
    }
}

/// Dykstra's alternating projections onto box ∩ slab, started from `start`.
fn dykstra(
    start: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    sum_min: f64,
    sum_max: f64,
    out: &mut [f64],
) -> Result<()> {
    let d = start.len();
    let mut x = start;
    let mut p = vec![0.0; d];
    let mut q = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    for _ in 0..DYKSTRA_MAX_SWEEPS {
        for j in 0..d {
            tmp[j] = x[j] + p[j];
        }
        y.copy_from_slice(&tmp);
        clamp_box(&mut y, lo, hi);
        for j in 0..d {
            p[j] = tmp[j] - y[j];
            tmp[j] = y[j] + q[j];
        }
        let mut x_new = tmp.clone();
        project_slab(&mut x_new, sum_min, sum_max);
        for j in 0..d {
            q[j] = tmp[j] - x_new[j];
        }
        let change = crate::vecops::dist(&x_new, &x);
        // x can stall while the two projections still disagree
        let gap = crate::vecops::dist(&x_new, &y);
        x = x_new;
        if change <= DYKSTRA_TOL && gap <= DYKSTRA_TOL {
            out.copy_from_slice(&y);
            let s: f64 = y.iter().sum();
            if s < sum_min - MEMBERSHIP_TOL || s > sum_max + MEMBERSHIP_TOL {
                return Err(PdraError::Invariant(format!(
                    "projection left slab [{sum_min}, {sum_max}] with sum {s}"
                )));
            }
            return Ok(());
        }
    }
    Err(PdraError::Invariant(format!(
        "Dykstra projection did not converge in {DYKSTRA_MAX_SWEEPS} sweeps"
    )))
}

/// Exact projection for slow Dykstra cases: the minimiser is
/// clamp(x − τ1) with τ chosen so the sum hits the nearer slab face.
/// The sum is monotone in τ, so τ is bracketed by bisection.
fn shift_projection(raw: &[f64], lo: &[f64], hi: &[f64], sum_min: f64, sum_max: f64, out: &mut [f64]) -> Result<()> {
    let at = |t: f64, y: &mut [f64]| -> f64 {
        for j in 0..y.len() {
            y[j] = (raw[j] - t).clamp(lo[j], hi[j]);
        }
        y.iter().sum()
    };
    let s0 = at(0.0, out);
    let target = s0.clamp(sum_min, sum_max);
    if s0 == target {
        return Ok(());
    }
    let spread = raw
        .iter()
        .zip(lo.iter().zip(hi))
        .fold(0.0_f64, |m, (x, (a, b))| m.max((x - a).abs()).max((x - b).abs()));
    let (mut t_lo, mut t_hi) = (-spread - 1.0, spread + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (t_lo + t_hi);
        if at(mid, out) > target {
            t_lo = mid;
        } else {
            t_hi = mid;
        }
        if t_hi - t_lo <= f64::EPSILON * (1.0 + mid.abs()) {
            break;
        }
    }
    let s = at(0.5 * (t_lo + t_hi), out);
    if s < sum_min - MEMBERSHIP_TOL || s > sum_max + MEMBERSHIP_TOL {
        return Err(PdraError::Invariant(format!("box and slab [{sum_min}, {sum_max}] do not intersect")));
    }
    Ok(())
}
