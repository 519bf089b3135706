//! Sequential and data-parallel execution of independent jobs.
//!
//! Every job receives its index and derives its own random stream from it,
//! so the two modes produce identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[derive(Default)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}


impl Execution {
    /// `f(0), ..., f(count - 1)`, in index order.
    pub fn map<T, F>(self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..count).map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..count).into_par_iter().map(f).collect(),
        }
    }

    /// Folds `f(i)` for `i` in `0..count` into per-chunk accumulators, then
    /// merges them. `merge` must be associative and commutative.
    pub fn fold<A, F, M>(self, count: usize, init: impl Fn() -> A + Sync + Send, f: F, merge: M) -> A
    where
        A: Send,
        F: Fn(&mut A, usize) + Sync + Send,
        M: Fn(A, A) -> A + Sync + Send,
    {
        match self {
            Execution::Sequential => {
                let mut acc = init();
                for i in 0..count {
                    f(&mut acc, i);
                }
                acc
            }
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..count)
                .into_par_iter()
                .fold(&init, |mut acc, i| {
                    f(&mut acc, i);
                    acc
                })
                .reduce(&init, &merge),
        }
    }

    /// As [`fold`](Self::fold) with fallible jobs; the first error in index
    /// order is not guaranteed, only that some error is returned.
    pub fn try_fold<A, E, F, M>(
        self,
        count: usize,
        init: impl Fn() -> A + Sync + Send,
        f: F,
        merge: M,
    ) -> Result<A, E>
    where
        A: Send,
        E: Send,
        F: Fn(&mut A, usize) -> Result<(), E> + Sync + Send,
        M: Fn(A, A) -> A + Sync + Send,
    {
        match self {
            Execution::Sequential => {
                let mut acc = init();
                for i in 0..count {
                    f(&mut acc, i)?;
                }
                Ok(acc)
            }
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..count)
                .into_par_iter()
                .try_fold(&init, |mut acc, i| f(&mut acc, i).map(|()| acc))
                .try_reduce(&init, |a, b| Ok(merge(a, b))),
        }
    }
}
