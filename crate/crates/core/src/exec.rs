//! Execution mode switch.
//!
//! Every parallel loop in the crate is an independent per-item map, so
//! results do not depend on scheduling. Sequential mode exists so tests and
//! `--deterministic` runs exercise a single, fixed evaluation order.

use rayon::prelude::*;
use std::sync::atomic::{AtomicBool, Ordering};

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);

pub fn set_sequential(on: bool) {
    SEQUENTIAL.store(on, Ordering::SeqCst);
}

pub fn is_sequential() -> bool {
    SEQUENTIAL.load(Ordering::SeqCst)
}

/// Maps `f` over `0..n`, in parallel unless sequential mode is on.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if is_sequential() {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}
