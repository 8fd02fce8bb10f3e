//! Data-parallel map with a sequential fallback.
//!
//! All parallelism in this crate goes through [`map_ordered`]: a map over
//! independent items whose results are collected in input order. Reductions
//! over the collected values stay sequential, so the parallel schedule and the
//! sequential fallback produce bit-identical results.
//!
//! Built without the `parallel` feature the crate is fully sequential. With it,
//! [`set_serial_mode`] still allows forcing the sequential reference path at
//! runtime (the CLI maps `--threads 1` onto this).

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SERIAL: AtomicBool = AtomicBool::new(false);

/// Force the sequential reference path even when the `parallel` feature is on.
pub fn set_serial_mode(serial: bool) {
    FORCE_SERIAL.store(serial, Ordering::Relaxed);
}

/// Whether maps currently run sequentially.
pub fn serial_mode() -> bool {
    FORCE_SERIAL.load(Ordering::Relaxed)
}

/// Sequential reference implementation.
pub fn map_ordered_serial<T: Sync, O: Send>(items: &[T], f: impl Fn(&T) -> O + Sync + Send) -> Vec<O> {
    items.iter().map(f).collect()
}

/// Rayon implementation; order of results matches input order.
#[cfg(feature = "parallel")]
pub fn map_ordered_parallel<T: Sync, O: Send>(items: &[T], f: impl Fn(&T) -> O + Sync + Send) -> Vec<O> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Maps `f` over `items`, in parallel when available, preserving input order.
pub fn map_ordered<T: Sync, O: Send>(items: &[T], f: impl Fn(&T) -> O + Sync + Send) -> Vec<O> {
    #[cfg(feature = "parallel")]
    {
        if !serial_mode() {
            return map_ordered_parallel(items, f);
        }
    }
    map_ordered_serial(items, f)
}

/// Index-based variant for loops that only need the position.
pub fn map_indices<O: Send>(n: usize, f: impl Fn(usize) -> O + Sync + Send) -> Vec<O> {
    let idx: Vec<usize> = (0..n).collect();
    map_ordered(&idx, |i| f(*i))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serial_and_parallel_agree() {
        let items: Vec<f64> = (0..1000).map(|i| i as f64 * 0.1).collect();
        let f = |x: &f64| (x.sin() * x.exp()).to_bits();
        let serial = map_ordered_serial(&items, f);
        let auto = map_ordered(&items, f);
        assert_eq!(serial, auto);
        #[cfg(feature = "parallel")]
        assert_eq!(serial, map_ordered_parallel(&items, f));
    }
}
