//! Benchmark-only crate; see `benches/pipeline.rs`.
//!
//! Shared fixtures live here so benchmarks stay comparable across runs.

use kre_core::{generate_synthetic, EmbeddingSet};

/// Standard benchmark fixture: `n` items in `dim` dimensions, moderately
/// overlapping clusters, fixed seed.
pub fn fixture(n_ids: usize, per_id: usize, dim: usize) -> EmbeddingSet {
    generate_synthetic(n_ids, per_id, dim, 0.25, 1234).unwrap()
}
