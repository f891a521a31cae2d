//! Small dense-vector helpers over `&[f64]`.
//!
//! Every reduction runs in index order so results are reproducible bit for bit.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| alpha * v).collect()
}

/// Mean of equally sized vectors, accumulated in slice order.
pub fn mean_of<V: AsRef<[f64]>>(points: &[V], dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for p in points {
        axpy(1.0, p.as_ref(), &mut acc);
    }
    let n = points.len().max(1) as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    acc
}

/// Mean over a subset of indices, accumulated in the order given.
pub fn mean_over<V: AsRef<[f64]>>(points: &[V], idx: &[usize], dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for &i in idx {
        axpy(1.0, points[i].as_ref(), &mut acc);
    }
    let n = idx.len().max(1) as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    acc
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_over_subset() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![100.0, 100.0]];
        assert_eq!(mean_over(&pts, &[0, 1], 2), vec![2.0, 3.0]);
        assert_eq!(mean_of(&pts[..2], 2), vec![2.0, 3.0]);
    }

    #[test]
    fn norms() {
        assert_eq!(norm(&[3.0, 4.0]), 5.0);
        assert_eq!(norm_inf(&[-7.0, 4.0]), 7.0);
        assert_eq!(dist(&[1.0, 1.0], &[4.0, 5.0]), 5.0);
    }
}
