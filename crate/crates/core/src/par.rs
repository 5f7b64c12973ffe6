//! Data-parallel helpers.
//!
//! With the `parallel` feature the maps run on the rayon pool, otherwise they
//! fall back to plain iterators. Results are always returned in input order
//! and reductions are performed by the caller over that ordered output, so the
//! two paths produce bit-identical numbers.

/// Execution strategy for the data-parallel loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn from_flag(parallel: bool) -> Self {
        if parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Apply `f` to every element mutably, collecting results in order.
pub fn map_mut<T, R, F>(exec: Exec, items: &mut [T], f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            items
                .par_iter_mut()
                .enumerate()
                .map(|(i, x)| f(i, x))
                .collect()
        }
        _ => items.iter_mut().enumerate().map(|(i, x)| f(i, x)).collect(),
    }
}

/// Apply `f` to each index range `[start, end)` of length `chunk` covering `0..n`.
pub fn map_chunks<R, F>(exec: Exec, n: usize, chunk: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize, usize) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    let ranges: Vec<(usize, usize)> = (0..n)
        .step_by(chunk)
        .map(|s| (s, (s + chunk).min(n)))
        .collect();
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            ranges.into_par_iter().map(|(s, e)| f(s, e)).collect()
        }
        _ => ranges.into_iter().map(|(s, e)| f(s, e)).collect(),
    }
}
