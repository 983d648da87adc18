//! Realization-level work distribution.
//!
//! With the `parallel` feature the parallel strategy runs on rayon; without it
//! every strategy degrades to a plain sequential loop. Results always come back
//! in index order.

/// How a batch of independent realizations is processed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// `jobs = None` uses the global pool.
    #[default]
    Parallel,
    ParallelWith {
        jobs: usize,
    },
}

impl Execution {
    pub fn with_jobs(jobs: Option<usize>) -> Self {
        match jobs {
            Some(0) | None => Execution::Parallel,
            Some(1) => Execution::Sequential,
            Some(jobs) => Execution::ParallelWith { jobs },
        }
    }

    /// Evaluates `f(0..n)` and collects the results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => par_map(n, &f),
            #[cfg(feature = "parallel")]
            Execution::ParallelWith { jobs } => {
                match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                    Ok(pool) => pool.install(|| par_map(n, &f)),
                    Err(_) => par_map(n, &f),
                }
            }
            #[cfg(not(feature = "parallel"))]
            _ => (0..n).map(f).collect(),
        }
    }

    /// Like [`Execution::map`] over the items of a slice.
    pub fn map_slice<'a, I, T, F>(self, items: &'a [I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(usize, &'a I) -> T + Sync + Send,
    {
        self.map(items.len(), |i| f(i, &items[i]))
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(n: usize, f: &F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}
