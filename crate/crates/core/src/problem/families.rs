//! Cost and constraint families.
//!
//! Oracles are closed enums rather than arbitrary closures so that the
//! smoothness constants (B, L, curvature) can be computed for each family over
//! a box.

use serde::{Deserialize, Serialize};

/// Per-agent cost f_i. All families are separable across coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Cost {
    /// f ≡ 0.
    Zero,
    /// Σ_j a_j (θ_j − c_j)².
    Quadratic { a: Vec<f64>, c: Vec<f64> },
    /// −Σ_j β_j log θ_j. Terms with β_j = 0 are skipped entirely.
    NegLog { beta: Vec<f64> },
    /// Σ_j w_j exp(c_j θ_j). Terms with w_j = 0 are skipped.
    Exponential { w: Vec<f64>, c: Vec<f64> },
}

impl Cost {
    pub fn dim(&self) -> Option<usize> {
        match self {
            Cost::Zero => None,
            Cost::Quadratic { a, .. } => Some(a.len()),
            Cost::NegLog { beta } => Some(beta.len()),
            Cost::Exponential { w, .. } => Some(w.len()),
        }
    }

    /// Checks vector lengths and convexity of the parameters.
    pub fn validate(&self, dim: usize) -> Result<(), String> {
        let check_len = |name: &str, v: &[f64]| {
            if v.len() != dim {
                Err(format!("{name} has length {}, expected {dim}", v.len()))
            } else if !v.iter().all(|x| x.is_finite()) {
                Err(format!("{name} has a non-finite entry"))
            } else {
                Ok(())
            }
        };
        match self {
            Cost::Zero => Ok(()),
            Cost::Quadratic { a, c } => {
                check_len("a", a)?;
                check_len("c", c)?;
                if a.iter().any(|&v| v < 0.0) {
                    return Err("quadratic weights must be nonnegative".into());
                }
                Ok(())
            }
            Cost::NegLog { beta } => {
                check_len("beta", beta)?;
                if beta.iter().any(|&v| v < 0.0) {
                    return Err("log-utility weights must be nonnegative".into());
                }
                Ok(())
            }
            Cost::Exponential { w, c } => {
                check_len("w", w)?;
                check_len("c", c)?;
                if w.iter().any(|&v| v < 0.0) {
                    return Err("exponential weights must be nonnegative".into());
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Cost::Zero => 0.0,
            Cost::Quadratic { a, c } => a
                .iter()
                .zip(c)
                .zip(x)
                .map(|((a, c), x)| a * (x - c) * (x - c))
                .sum(),
            Cost::NegLog { beta } => beta
                .iter()
                .zip(x)
                .filter(|(b, _)| **b != 0.0)
                .map(|(b, x)| -b * x.ln())
                .sum(),
            Cost::Exponential { w, c } => w
                .iter()
                .zip(c)
                .zip(x)
                .filter(|((w, _), _)| **w != 0.0)
                .map(|((w, c), x)| w * (c * x).exp())
                .sum(),
        }
    }

    /// Writes ∇f(x) into `out`.
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Cost::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            Cost::Quadratic { a, c } => {
                for j in 0..out.len() {
                    out[j] = 2.0 * a[j] * (x[j] - c[j]);
                }
            }
            Cost::NegLog { beta } => {
                for j in 0..out.len() {
                    out[j] = if beta[j] == 0.0 { 0.0 } else { -beta[j] / x[j] };
                }
            }
            Cost::Exponential { w, c } => {
                for j in 0..out.len() {
                    out[j] = if w[j] == 0.0 {
                        0.0
                    } else {
                        w[j] * c[j] * (c[j] * x[j]).exp()
                    };
                }
            }
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.grad_into(x, &mut g);
        g
    }

    /// Largest Hessian eigenvalue over the box. The Hessian is diagonal for
    /// every family.
    pub fn curvature_sup(&self, lo: &[f64], hi: &[f64]) -> f64 {
        self.curvature_range(lo, hi).1
    }

    /// Smallest Hessian eigenvalue over the box (strong convexity modulus).
    pub fn curvature_inf(&self, lo: &[f64], hi: &[f64]) -> f64 {
        self.curvature_range(lo, hi).0
    }

    fn curvature_range(&self, lo: &[f64], hi: &[f64]) -> (f64, f64) {
        let d = lo.len();
        let per: Vec<(f64, f64)> = match self {
            Cost::Zero => vec![(0.0, 0.0); d],
            Cost::Quadratic { a, .. } => a.iter().map(|a| (2.0 * a, 2.0 * a)).collect(),
            Cost::NegLog { beta } => (0..d)
                .map(|j| {
                    if beta[j] == 0.0 {
                        (0.0, 0.0)
                    } else {
                        let b = beta[j];
                        let sup = if lo[j] > 0.0 { b / (lo[j] * lo[j]) } else { f64::INFINITY };
                        let inf = if hi[j] > 0.0 { b / (hi[j] * hi[j]) } else { f64::INFINITY };
                        (inf, sup)
                    }
                })
                .collect(),
            Cost::Exponential { w, c } => (0..d)
                .map(|j| {
                    if w[j] == 0.0 {
                        (0.0, 0.0)
                    } else {
                        let k = w[j] * c[j] * c[j];
                        let e_lo = (c[j] * lo[j]).exp();
                        let e_hi = (c[j] * hi[j]).exp();
                        (k * e_lo.min(e_hi), k * e_lo.max(e_hi))
                    }
                })
                .collect(),
        };
        per.iter().fold((f64::INFINITY, 0.0_f64), |(mn, mx), &(a, b)| {
            (mn.min(a), mx.max(b))
        })
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self, Cost::Zero | Cost::Quadratic { .. })
    }
}

/// Coupling constraint g_t, evaluated at an average parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Constraint {
    /// w·x − b.
    Linear { w: Vec<f64>, b: f64 },
    /// ½ Σ_j q_j x_j² + w·x − b, with q ≥ 0.
    Quadratic { q: Vec<f64>, w: Vec<f64>, b: f64 },
    /// inner(scale·x) + shift. Produced by the conservative transform.
    Scaled {
        inner: Box<Constraint>,
        scale: f64,
        shift: f64,
    },
}

impl Constraint {
    pub fn dim(&self) -> usize {
        match self {
            Constraint::Linear { w, .. } | Constraint::Quadratic { w, .. } => w.len(),
            Constraint::Scaled { inner, .. } => inner.dim(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<(), String> {
        match self {
            Constraint::Linear { w, b } => {
                if w.len() != dim {
                    return Err(format!("w has length {}, expected {dim}", w.len()));
                }
                if !w.iter().chain(std::iter::once(b)).all(|v| v.is_finite()) {
                    return Err("non-finite coefficient".into());
                }
                Ok(())
            }
            Constraint::Quadratic { q, w, b } => {
                if w.len() != dim || q.len() != dim {
                    return Err(format!("q/w must have length {dim}"));
                }
                if !q.iter().chain(w).chain(std::iter::once(b)).all(|v| v.is_finite()) {
                    return Err("non-finite coefficient".into());
                }
                if q.iter().any(|&v| v < 0.0) {
                    return Err("quadratic constraint curvature must be nonnegative".into());
                }
                Ok(())
            }
            Constraint::Scaled { inner, scale, shift } => {
                if !(scale.is_finite() && *scale >= 0.0 && shift.is_finite()) {
                    return Err("scale must be finite and nonnegative".into());
                }
                inner.validate(dim)
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Constraint::Linear { w, b } => crate::vecops::dot(w, x) - b,
            Constraint::Quadratic { q, w, b } => {
                let mut s = 0.0;
                for j in 0..x.len() {
                    s += 0.5 * q[j] * x[j] * x[j] + w[j] * x[j];
                }
                s - b
            }
            Constraint::Scaled { inner, scale, shift } => {
                let y: Vec<f64> = x.iter().map(|v| scale * v).collect();
                inner.value(&y) + shift
            }
        }
    }

    /// Adds `coef · ∇g(x)` to `out`, chain rule included.
    pub fn add_grad(&self, x: &[f64], coef: f64, out: &mut [f64]) {
        match self {
            Constraint::Linear { w, .. } => crate::vecops::axpy(coef, w, out),
            Constraint::Quadratic { q, w, .. } => {
                for j in 0..out.len() {
                    out[j] += coef * (q[j] * x[j] + w[j]);
                }
            }
            Constraint::Scaled { inner, scale, .. } => {
                let y: Vec<f64> = x.iter().map(|v| scale * v).collect();
                inner.add_grad(&y, coef * scale, out);
            }
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.add_grad(x, 1.0, &mut g);
        g
    }

    /// Adds `coef · (∇inner)(scale·x)` to `out`: the gradient of the outer
    /// function evaluated at the scaled point, without the chain factor. For
    /// unscaled constraints this equals [`Constraint::add_grad`].
    pub fn add_outer_grad(&self, x: &[f64], coef: f64, out: &mut [f64]) {
        match self {
            Constraint::Scaled { inner, scale, .. } => {
                let y: Vec<f64> = x.iter().map(|v| scale * v).collect();
                inner.add_grad(&y, coef, out);
            }
            _ => self.add_grad(x, coef, out),
        }
    }

    /// Sup of g over the box `[lo, hi]`. Exact, since every family is a
    /// separable convex function whose per-coordinate max sits at an endpoint.
    pub fn sup_over_box(&self, lo: &[f64], hi: &[f64]) -> f64 {
        match self {
            Constraint::Linear { w, b } => {
                (0..w.len()).map(|j| (w[j] * lo[j]).max(w[j] * hi[j])).sum::<f64>() - b
            }
            Constraint::Quadratic { q, w, b } => {
                let f = |j: usize, x: f64| 0.5 * q[j] * x * x + w[j] * x;
                (0..w.len()).map(|j| f(j, lo[j]).max(f(j, hi[j]))).sum::<f64>() - b
            }
            Constraint::Scaled { inner, scale, shift } => {
                let (slo, shi) = scaled_box(*scale, lo, hi);
                inner.sup_over_box(&slo, &shi) + shift
            }
        }
    }

    /// (B, L) of g itself over the box, chain factor included.
    pub fn smoothness(&self, lo: &[f64], hi: &[f64]) -> (f64, f64) {
        match self {
            Constraint::Linear { w, .. } => (crate::vecops::norm(w), 0.0),
            Constraint::Quadratic { q, w, .. } => {
                let b2: f64 = (0..w.len())
                    .map(|j| {
                        let a = (q[j] * lo[j] + w[j]).abs();
                        let c = (q[j] * hi[j] + w[j]).abs();
                        a.max(c).powi(2)
                    })
                    .sum();
                (b2.sqrt(), q.iter().fold(0.0_f64, |m, v| m.max(*v)))
            }
            Constraint::Scaled { inner, scale, .. } => {
                let (slo, shi) = scaled_box(*scale, lo, hi);
                let (b, l) = inner.smoothness(&slo, &shi);
                (scale * b, scale * scale * l)
            }
        }
    }

    /// (B, L) of the outer function over the region it is evaluated on. For
    /// a scaled constraint this is the inner constraint over the scaled box.
    pub fn outer_smoothness(&self, lo: &[f64], hi: &[f64]) -> (f64, f64) {
        match self {
            Constraint::Scaled { inner, scale, .. } => {
                let (slo, shi) = scaled_box(*scale, lo, hi);
                inner.smoothness(&slo, &shi)
            }
            _ => self.smoothness(lo, hi),
        }
    }

    /// Constant gradient, if the constraint is affine.
    pub fn linear_gradient(&self) -> Option<Vec<f64>> {
        match self {
            Constraint::Linear { w, .. } => Some(w.clone()),
            Constraint::Quadratic { .. } => None,
            Constraint::Scaled { inner, scale, .. } => inner
                .linear_gradient()
                .map(|g| g.iter().map(|v| scale * v).collect()),
        }
    }

    pub fn is_linear(&self) -> bool {
        self.linear_gradient().is_some()
    }
}

fn scaled_box(scale: f64, lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let a: Vec<f64> = lo.iter().map(|v| scale * v).collect();
    let b: Vec<f64> = hi.iter().map(|v| scale * v).collect();
    (a, b)
}
