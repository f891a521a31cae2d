//! Execution strategy for the data-parallel inner loops (per-agent updates,
//! per-agent window estimates, Monte Carlo trials).
//!
//! With the `parallel` feature the work is spread over the rayon pool;
//! without it, or with [`Exec::Sequential`], the same closures run in index
//! order. Both paths return results in index order, and every reduction over
//! those results happens afterwards in a fixed order, so the two paths are
//! bit-identical.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exec {
    Sequential,
    Parallel,
    /// Parallel once the item count reaches [`AUTO_PARALLEL_THRESHOLD`].
    #[default]
    Auto,
}

pub const AUTO_PARALLEL_THRESHOLD: usize = 64;

impl Exec {
    fn parallel_for(self, n: usize) -> bool {
        cfg!(feature = "parallel")
            && match self {
                Exec::Sequential => false,
                Exec::Parallel => true,
                Exec::Auto => n >= AUTO_PARALLEL_THRESHOLD,
            }
    }

    /// `(0..n).map(f).collect()`, possibly on the rayon pool.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        if self.parallel_for(n) {
            par_map(n, f)
        } else {
            (0..n).map(f).collect()
        }
    }

    /// Apply `f` to every element of `items` in place.
    pub fn for_each_mut<T, F>(self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        if self.parallel_for(items.len()) {
            par_for_each_mut(items, f)
        } else {
            items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
fn par_for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

#[cfg(not(feature = "parallel"))]
fn par_for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = Exec::Sequential.map(1000, f);
        let b = Exec::Parallel.map(1000, f);
        let c = Exec::Auto.map(1000, f);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn for_each_mut_in_place() {
        let mut v = vec![1.0; 100];
        Exec::Parallel.for_each_mut(&mut v, |i, x| *x += i as f64);
        assert_eq!(v[99], 100.0);
    }
}
