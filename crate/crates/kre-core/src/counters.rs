//! Internal operation counters used by tests to verify that the offline /
//! online split really amortizes the quadratic gallery work.

use std::sync::atomic::{AtomicU64, Ordering};

static PAIRWISE_BUILDS: AtomicU64 = AtomicU64::new(0);
static NEIGHBOR_TABLE_BUILDS: AtomicU64 = AtomicU64::new(0);

pub(crate) fn record_pairwise_build() {
    PAIRWISE_BUILDS.fetch_add(1, Ordering::Relaxed);
}

pub(crate) fn record_neighbor_table_build() {
    NEIGHBOR_TABLE_BUILDS.fetch_add(1, Ordering::Relaxed);
}

/// Number of full pairwise-matrix computations so far in this process.
pub fn pairwise_builds() -> u64 {
    PAIRWISE_BUILDS.load(Ordering::Relaxed)
}

/// Number of full neighbor-table (argsort) builds so far in this process.
pub fn neighbor_table_builds() -> u64 {
    NEIGHBOR_TABLE_BUILDS.load(Ordering::Relaxed)
}
