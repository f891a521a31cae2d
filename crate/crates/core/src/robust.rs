//! Coordinate-wise median-based robust mean.
//!
//! For each coordinate the estimator keeps the `n − ⌊αn⌋` inputs closest to
//! the coordinate median (ties go to the lower input index) and averages
//! them. Kept values are summed in ascending index order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{PdraError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustMeanConfig {
    pub alpha: f64,
    pub n_inputs: usize,
}

impl RobustMeanConfig {
    pub fn new(alpha: f64, n_inputs: usize) -> Result<Self> {
        if !(0.0..0.5).contains(&alpha) {
            return Err(PdraError::Argument(format!("α must lie in [0, 0.5), got {alpha}")));
        }
        if n_inputs == 0 {
            return Err(PdraError::Argument("robust mean needs at least one input".into()));
        }
        Ok(RobustMeanConfig { alpha, n_inputs })
    }

    /// n − ⌊αn⌋.
    pub fn n_keep(&self) -> usize {
        self.n_inputs - (self.alpha * self.n_inputs as f64).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustMeanResult {
    pub estimate: Vec<f64>,
    /// Kept input indices per coordinate, ascending.
    pub kept_indices_per_coord: Vec<Vec<usize>>,
    /// Largest distance to the median among the kept values, per coordinate.
    pub radius_per_coord: Vec<f64>,
}

fn check_points<V: AsRef<[f64]>>(points: &[V]) -> Result<usize> {
    let first = points
        .first()
        .ok_or_else(|| PdraError::Argument("empty point list".into()))?;
    let d = first.as_ref().len();
    if let Some(bad) = points.iter().find(|p| p.as_ref().len() != d) {
        return Err(PdraError::Dimension { context: "robust mean input", expected: d, actual: bad.as_ref().len() });
    }
    Ok(d)
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-coordinate median; even counts use the midpoint of the middle pair.
pub fn coordinate_median<V: AsRef<[f64]>>(points: &[V]) -> Result<Vec<f64>> {
    let d = check_points(points)?;
    let mut buf = vec![0.0; points.len()];
    Ok((0..d)
        .map(|j| {
            for (b, p) in buf.iter_mut().zip(points) {
                *b = p.as_ref()[j];
            }
            median_of(&mut buf)
        })
        .collect())
}

/// Kept indices (ascending) and radius for one coordinate.
fn keep_nearest(values: &[f64], n_keep: usize, scratch: &mut Vec<(f64, usize)>) -> (f64, Vec<usize>, f64) {
    let mut sorted = values.to_vec();
    let med = median_of(&mut sorted);
    scratch.clear();
    scratch.extend(values.iter().enumerate().map(|(i, v)| ((v - med).abs(), i)));
    let key = |a: &(f64, usize), b: &(f64, usize)| -> Ordering { a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)) };
    if n_keep < scratch.len() {
        scratch.select_nth_unstable_by(n_keep - 1, key);
    }
    let kept_part = &scratch[..n_keep];
    let radius = kept_part.iter().fold(0.0_f64, |m, e| m.max(e.0));
    let mut kept: Vec<usize> = kept_part.iter().map(|e| e.1).collect();
    kept.sort_unstable();
    (med, kept, radius)
}

/// The estimator with its certificate data.
pub fn robust_mean<V: AsRef<[f64]>>(points: &[V], cfg: &RobustMeanConfig) -> Result<RobustMeanResult> {
    let d = check_points(points)?;
    if points.len() != cfg.n_inputs {
        return Err(PdraError::Argument(format!(
            "robust mean expected {} inputs, got {}",
            cfg.n_inputs,
            points.len()
        )));
    }
    let n_keep = cfg.n_keep();
    let mut scratch = Vec::with_capacity(points.len());
    let mut column = vec![0.0; points.len()];
    let mut estimate = Vec::with_capacity(d);
    let mut kept_all = Vec::with_capacity(d);
    let mut radii = Vec::with_capacity(d);
    for j in 0..d {
        for (c, p) in column.iter_mut().zip(points) {
            *c = p.as_ref()[j];
        }
        let (_, kept, radius) = keep_nearest(&column, n_keep, &mut scratch);
        let s: f64 = kept.iter().map(|&i| column[i]).sum();
        estimate.push(s / n_keep as f64);
        kept_all.push(kept);
        radii.push(radius);
    }
    Ok(RobustMeanResult { estimate, kept_indices_per_coord: kept_all, radius_per_coord: radii })
}

/// Estimate only; same arithmetic as [`robust_mean`].
pub fn robust_mean_estimate<V: AsRef<[f64]>>(points: &[V], cfg: &RobustMeanConfig) -> Result<Vec<f64>> {
    robust_mean(points, cfg).map(|r| r.estimate)
}

/// (2α/(1−α))(1 + √((1−α)²/(1−2α))) · r · √d.
pub fn prop2_bound(alpha: f64, r: f64, d: usize) -> Result<f64> {
    if !(0.0..0.5).contains(&alpha) {
        return Err(PdraError::Argument(format!("bound undefined for α = {alpha}")));
    }
    if !(r >= 0.0) {
        return Err(PdraError::Argument(format!("radius must be ≥ 0, got {r}")));
    }
    let one_m = 1.0 - alpha;
    Ok((2.0 * alpha / one_m) * (1.0 + (one_m * one_m / (1.0 - 2.0 * alpha)).sqrt()) * r * (d as f64).sqrt())
}

/// C_α: [`prop2_bound`] with r = 1.
pub fn c_alpha(alpha2: f64, d: usize) -> Result<f64> {
    prop2_bound(alpha2, 1.0, d)
}

/// Measured spread max_{i∈S} ‖x_i − x̄_S‖_∞ of a trusted subset.
pub fn trusted_radius<V: AsRef<[f64]>>(points: &[V], trusted: &[usize]) -> f64 {
    if trusted.is_empty() {
        return 0.0;
    }
    let d = points[trusted[0]].as_ref().len();
    let mean = crate::vecops::mean_over(points, trusted, d);
    trusted
        .iter()
        .map(|&i| {
            points[i]
                .as_ref()
                .iter()
                .zip(&mean)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|x| vec![*x]).collect()
    }

    #[test]
    fn medians() {
        assert_eq!(coordinate_median(&pts(&[1.0, 2.0, 3.0, 4.0, 100.0])).unwrap(), vec![3.0]);
        assert_eq!(coordinate_median(&pts(&[1.0, 2.0, 3.0, 4.0])).unwrap(), vec![2.5]);
        let p = vec![vec![1.0, 10.0], vec![2.0, 20.0], vec![3.0, 30.0]];
        assert_eq!(coordinate_median(&p).unwrap(), vec![2.0, 20.0]);
        assert!(coordinate_median::<Vec<f64>>(&[]).is_err());
    }

    #[test]
    fn trims_outlier() {
        let cfg = RobustMeanConfig::new(0.2, 5).unwrap();
        let r = robust_mean(&pts(&[1.0, 2.0, 3.0, 4.0, 100.0]), &cfg).unwrap();
        assert_eq!(r.estimate, vec![2.5]);
        assert_eq!(r.kept_indices_per_coord[0], vec![0, 1, 2, 3]);
        assert_eq!(r.radius_per_coord[0], 2.0);
    }

    #[test]
    fn alpha_zero_is_plain_mean() {
        let cfg = RobustMeanConfig::new(0.0, 3).unwrap();
        assert_eq!(robust_mean_estimate(&pts(&[1.0, 2.0, 6.0]), &cfg).unwrap(), vec![3.0]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        // median 2; distances {1, 0, 1}; keep 2 → indices 0 and 1
        let cfg = RobustMeanConfig::new(0.34, 3).unwrap();
        let r = robust_mean(&pts(&[1.0, 2.0, 3.0]), &cfg).unwrap();
        assert_eq!(r.kept_indices_per_coord[0], vec![0, 1]);
    }

    #[test]
    fn nonfinite_inputs_are_discarded() {
        let cfg = RobustMeanConfig::new(0.4, 5).unwrap();
        let r = robust_mean_estimate(&pts(&[1.0, f64::NAN, 1.0, f64::INFINITY, 1.0]), &cfg).unwrap();
        assert_eq!(r, vec![1.0]);
    }

    #[test]
    fn config_and_count_errors() {
        assert!(RobustMeanConfig::new(0.5, 4).is_err());
        assert!(RobustMeanConfig::new(0.1, 0).is_err());
        let cfg = RobustMeanConfig::new(0.2, 5).unwrap();
        assert!(robust_mean(&pts(&[1.0, 2.0]), &cfg).is_err());
    }

    #[test]
    fn bound_values() {
        assert!((prop2_bound(0.25, 1.0, 1).unwrap() - 1.3737734).abs() < 1e-6);
        assert!((c_alpha(0.25, 4).unwrap() - 2.7475469).abs() < 1e-6);
        assert_eq!(c_alpha(0.0, 3).unwrap(), 0.0);
        assert!(prop2_bound(0.5, 1.0, 1).is_err());
        let a = prop2_bound(0.1, 2.0, 1).unwrap();
        assert!((prop2_bound(0.1, 2.0, 4).unwrap() - 2.0 * a).abs() < 1e-12);
        assert!(prop2_bound(1e-9, 1.0, 1).unwrap() < 1e-8);
    }
}
