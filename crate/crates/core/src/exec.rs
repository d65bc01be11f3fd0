//! Order-preserving map over independent work items.

/// How independent grid points are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Worker pool of the given size; `None` uses all available cores.
    /// Falls back to sequential when built without the `parallel` feature.
    #[default]
    Parallel,
    Workers(usize),
}

impl Execution {
    pub fn from_workers(workers: Option<usize>) -> Self {
        match workers {
            None | Some(0) => Execution::Parallel,
            Some(1) => Execution::Sequential,
            Some(w) => Execution::Workers(w),
        }
    }
}

/// Applies `f` to every item; results come back in input order whatever
/// the execution mode.
pub fn map<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        Execution::Sequential => items.iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        #[cfg(feature = "parallel")]
        Execution::Workers(w) => {
            use rayon::prelude::*;
            match rayon::ThreadPoolBuilder::new().num_threads(w).build() {
                Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                Err(_) => items.iter().map(f).collect(),
            }
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel | Execution::Workers(_) => items.iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<u64> = (0..200).collect();
        let slow = |x: &u64| {
            std::thread::sleep(std::time::Duration::from_micros(200 - *x));
            x * x
        };
        let seq = map(&items, Execution::Sequential, slow);
        assert_eq!(map(&items, Execution::Parallel, slow), seq);
        assert_eq!(map(&items, Execution::Workers(3), slow), seq);
    }

    #[test]
    fn worker_flag() {
        assert_eq!(Execution::from_workers(None), Execution::Parallel);
        assert_eq!(Execution::from_workers(Some(1)), Execution::Sequential);
        assert_eq!(Execution::from_workers(Some(4)), Execution::Workers(4));
    }
}
