//! Execution policy for element loops.
//!
//! Every data-parallel loop in the crate goes through [`ExecPolicy`]. With the
//! `parallel` feature disabled, or with `parallel = false`, all loops run
//! sequentially on the calling thread.
//!
//! Maps always preserve input order, so element contributions are scattered
//! into global arrays in a fixed order regardless of the thread count. Only
//! scalar reductions are affected by `deterministic`: when it is off they use
//! a tree reduction whose association order depends on work stealing.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ExecPolicy {
    pub parallel: bool,
    pub deterministic: bool,
}

impl Default for ExecPolicy {
    fn default() -> Self {
        Self {
            parallel: cfg!(feature = "parallel"),
            deterministic: true,
        }
    }
}

impl ExecPolicy {
    pub const SEQUENTIAL: ExecPolicy = ExecPolicy {
        parallel: false,
        deterministic: true,
    };

    pub fn parallel() -> Self {
        Self {
            parallel: true,
            deterministic: true,
        }
    }

    /// Ordered map over `0..n`.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Ordered fallible map over `0..n`; the first error in index order wins.
    pub fn try_map<T, E, F>(&self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        let results = self.map(n, f);
        results.into_iter().collect()
    }

    /// Sum of `f(i)` over `0..n`.
    pub fn sum<F>(&self, n: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.parallel && !self.deterministic {
            return (0..n).into_par_iter().map(f).sum();
        }
        if self.parallel {
            return self.map(n, f).into_iter().sum();
        }
        (0..n).map(f).sum()
    }
}
