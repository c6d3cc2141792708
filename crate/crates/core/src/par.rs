//! Replica fan-out. With the `parallel` feature replicas run on the rayon
//! pool; without it they run in order on the calling thread. Results always
//! come back indexed by replica, so merged statistics do not depend on
//! scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub fn map_replicas<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_replicas<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Runs `f` with replica fan-out forced onto a single thread.
#[cfg(feature = "parallel")]
pub fn sequential<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("single-thread pool")
        .install(f)
}

#[cfg(not(feature = "parallel"))]
pub fn sequential<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    f()
}

/// Sizes the global pool used by [`map_replicas`]. Results do not depend on
/// the thread count.
#[cfg(feature = "parallel")]
pub fn configure_threads(n: usize) -> Result<(), String> {
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

#[cfg(not(feature = "parallel"))]
pub fn configure_threads(_n: usize) -> Result<(), String> {
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let v = map_replicas(100, |i| i * i);
        assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
        assert_eq!(sequential(|| map_replicas(5, |i| i)), vec![0, 1, 2, 3, 4]);
    }
}
