//! Parallel primitives with a sequential fallback.
//!
//! Everything here is bitwise deterministic: reductions sum fixed-size chunks
//! sequentially and fold the chunk results in index order, so the outcome does
//! not depend on the thread count or on whether the `parallel` feature is
//! enabled at all. Keep it that way; several acceptance checks compare output
//! bytes across runs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length for deterministic sums. Fixed: changing it changes the
/// floating-point association and therefore the output bytes.
const SUM_CHUNK: usize = 4096;

/// Map `f` over `0..n`, collecting in index order.
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Apply `f(i, &mut v[i])` to every element.
pub fn for_each_mut<T: Send>(v: &mut [T], f: impl Fn(usize, &mut T) + Sync + Send) {
    #[cfg(feature = "parallel")]
    {
        v.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
    }
    #[cfg(not(feature = "parallel"))]
    {
        v.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
    }
}

/// Apply `f` to consecutive length-`chunk` windows (columns of a flattened
/// grid, say) in parallel.
pub fn for_each_mut_chunks<T: Send>(v: &mut [T], chunk: usize, f: impl Fn(&mut [T]) + Sync + Send) {
    #[cfg(feature = "parallel")]
    {
        v.par_chunks_mut(chunk).for_each(&f);
    }
    #[cfg(not(feature = "parallel"))]
    {
        v.chunks_mut(chunk).for_each(&f);
    }
}

/// Deterministic sum of `f(i)` over `0..n`: sequential within fixed chunks,
/// chunk results folded in order.
pub fn sum_indexed(n: usize, f: impl Fn(usize) -> f64 + Sync + Send) -> f64 {
    let chunks = n.div_ceil(SUM_CHUNK);
    let partial = map_indexed(chunks, |c| {
        let lo = c * SUM_CHUNK;
        let hi = (lo + SUM_CHUNK).min(n);
        let mut s = 0.0;
        for i in lo..hi {
            s += f(i);
        }
        s
    });
    partial.iter().sum()
}

/// Deterministic sum of a slice.
pub fn sum_slice(v: &[f64]) -> f64 {
    sum_indexed(v.len(), |i| v[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_matches_sequential_fold() {
        let v: Vec<f64> = (0..20_000).map(|i| (i as f64).sin()).collect();
        let mut expect = 0.0;
        for c in v.chunks(SUM_CHUNK) {
            expect += c.iter().sum::<f64>();
        }
        assert_eq!(sum_slice(&v), expect);
    }

    #[test]
    fn map_preserves_order() {
        let v = map_indexed(1000, |i| i * i);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * i));
    }
}
