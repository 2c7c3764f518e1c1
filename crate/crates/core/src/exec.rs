//! Data-parallel helpers.
//!
//! Every batch loop in the crate (per-example gradients, per-dialogue
//! inference, perturbation of large batches) goes through [`map_ordered`].
//! Results are always returned in input order, so reductions performed by
//! the caller are bit-identical whether the work ran on one thread or many.
//! With the `parallel` feature disabled, [`Execution::Parallel`] silently
//! falls back to the sequential path.

/// How a batch loop is executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be spread across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map_ordered<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel {
        use rayon::prelude::*;
        return items
            .par_iter()
            .enumerate()
            .map(|(i, item)| f(i, item))
            .collect();
    }
    let _ = exec;
    items.iter().enumerate().map(|(i, item)| f(i, item)).collect()
}

/// Runs `f` over `0..n`, preserving order.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_preserve_order() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = map_ordered(Execution::Sequential, &items, |i, x| x * 3 + i as u64);
        let par = map_ordered(Execution::Parallel, &items, |i, x| x * 3 + i as u64);
        assert_eq!(seq, par);
        assert_eq!(map_range(Execution::Parallel, 5, |i| i), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn float_reduction_is_mode_independent() {
        let items: Vec<f64> = (0..4096).map(|i| (i as f64 * 0.37).sin()).collect();
        let sum = |exec| -> f64 {
            map_ordered(exec, &items, |_, x| x.exp())
                .into_iter()
                .sum()
        };
        assert_eq!(
            sum(Execution::Sequential).to_bits(),
            sum(Execution::Parallel).to_bits()
        );
    }
}
