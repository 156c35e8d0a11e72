//! Order-preserving data-parallel map used by batch collection, feedback
//! generation, and validation sweeps.
//!
//! With the `parallel` feature (default) the work runs on rayon; without it
//! the same call is a plain sequential loop. Results come back in input
//! order either way, so run logs are byte-identical across both builds.

/// Map `f` over `0..count`, preserving index order in the output.
#[cfg(feature = "parallel")]
pub fn map_indexed<U, F>(count: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U, F>(count: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..count).map(f).collect()
}

/// Sequential variant, always available; the bench suite compares this
/// against `map_indexed` on the same workload.
pub fn map_indexed_seq<U, F>(count: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..count).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let a = map_indexed(100, |i| i * 3);
        let b = map_indexed_seq(100, |i| i * 3);
        assert_eq!(a, b);
        assert_eq!(a[7], 21);
    }
}
