//! Execution mode for data-parallel loops.
//!
//! Every parallel loop in the workspace goes through these helpers so the
//! `parallel` feature can be switched off and so benches can compare both
//! modes in one binary. Work items are independent and results are written
//! by index, which keeps outputs identical for any thread count.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    /// Rayon work-stealing; falls back to sequential without the `parallel` feature.
    Rayon,
}

static GLOBAL: AtomicU8 = AtomicU8::new(1);

impl Parallelism {
    pub fn global() -> Self {
        match GLOBAL.load(Ordering::Relaxed) {
            0 => Parallelism::Sequential,
            _ => Parallelism::Rayon,
        }
    }

    pub fn set_global(mode: Parallelism) {
        GLOBAL.store(mode as u8, Ordering::Relaxed);
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Rayon
    }
}

impl Default for Parallelism {
    fn default() -> Self {
        Parallelism::global()
    }
}

/// `f(i)` for `i in 0..n`, collected in index order.
pub fn map_range<R, F>(mode: Parallelism, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Calls `f(chunk_index, chunk)` on consecutive `chunk`-sized pieces of `data`.
pub fn for_each_chunk_mut<T, F>(mode: Parallelism, data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && data.len() > chunk {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = mode;
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let a = map_range(Parallelism::Sequential, 100, |i| i * i);
        let b = map_range(Parallelism::Rayon, 100, |i| i * i);
        assert_eq!(a, b);

        let mut x = vec![0usize; 64];
        let mut y = vec![0usize; 64];
        for_each_chunk_mut(Parallelism::Sequential, &mut x, 8, |i, c| c.fill(i));
        for_each_chunk_mut(Parallelism::Rayon, &mut y, 8, |i, c| c.fill(i));
        assert_eq!(x, y);
    }
}
