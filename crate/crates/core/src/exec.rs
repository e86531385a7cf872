//! Batch execution with an optional rayon backend.
//!
//! Every helper keeps results in input order, so the outcome is identical
//! whether the work ran on one thread or many.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    /// Rayon's global pool. Falls back to sequential without the `parallel`
    /// feature.
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Applies `f` to every element in place.
    pub fn for_each_mut<T, F>(self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
            return;
        }
        items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
    }

    /// Maps every element in place and collects the results in order.
    pub fn map_mut<T, R, F>(self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(usize, &mut T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter_mut().enumerate().map(|(i, x)| f(i, x)).collect();
        }
        items.iter_mut().enumerate().map(|(i, x)| f(i, x)).collect()
    }

    /// Maps `0..n` and collects the results in order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps fixed-size chunks of `items`; chunk boundaries do not depend on
    /// the number of workers.
    pub fn map_chunks<T, R, F>(self, items: &[T], chunk: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&[T]) -> R + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_chunks(chunk).map(f).collect();
        }
        items.chunks(chunk).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let data: Vec<u64> = (0..1000).collect();
        for exec in [Exec::Sequential, Exec::Parallel] {
            let sums = exec.map_chunks(&data, 64, |c| c.iter().sum::<u64>());
            assert_eq!(sums.len(), 16);
            assert_eq!(sums.iter().sum::<u64>(), 499_500);
            let sq = exec.map_range(10, |i| i * i);
            assert_eq!(sq, vec![0, 1, 4, 9, 16, 25, 36, 49, 64, 81]);
            let mut v = vec![1, 2, 3];
            exec.for_each_mut(&mut v, |i, x| *x += i);
            assert_eq!(v, vec![1, 3, 5]);
        }
    }
}
