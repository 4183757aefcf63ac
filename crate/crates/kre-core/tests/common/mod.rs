//! Shared brute-force oracles and instance generators for integration tests.
//!
//! Every oracle here is written straight off the defining set algebra or
//! metric formula, independent of the engine's sparse/merge-join code paths,
//! so agreement is meaningful.

// not every test target uses every oracle
#![allow(dead_code)]

use std::collections::BTreeSet;

use kre_core::{DistanceMatrix, EmbeddingSet};

pub struct Rng(pub u64);

impl Rng {
    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    pub fn unit_f32(&mut self) -> f32 {
        (self.next() >> 40) as f32 / (1u64 << 24) as f32
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next() % n as u64) as usize
    }
}

/// Random embedding set: `n` rows, `dim` columns, uniform in [0, 1).
pub fn random_embeddings(rng: &mut Rng, n: usize, dim: usize) -> EmbeddingSet {
    let data: Vec<f32> = (0..n * dim).map(|_| rng.unit_f32()).collect();
    EmbeddingSet::new(data, dim, None, None).unwrap()
}

/// Full ascending argsort of every item's distances, ties by index. Computed
/// once per instance; the set-algebra oracles below stay literal.
pub fn oracle_sorted_rows(dist: &DistanceMatrix) -> Vec<Vec<usize>> {
    let n = dist.n_total();
    (0..n)
        .map(|p| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| {
                dist.value(p, a)
                    .total_cmp(&dist.value(p, b))
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect()
}

/// Literal mutual-membership test over the top-k lists.
pub fn oracle_reciprocal(sorted: &[Vec<usize>], p: usize, k: usize) -> BTreeSet<usize> {
    sorted[p][..k]
        .iter()
        .copied()
        .filter(|&j| sorted[j][..k].contains(&p))
        .collect()
}

/// Literal expansion: union in each member's half-k reciprocal set when at
/// least two thirds of it already overlaps the original set.
pub fn oracle_expanded(sorted: &[Vec<usize>], p: usize, k1: usize) -> BTreeSet<usize> {
    let base = oracle_reciprocal(sorted, p, k1);
    let half = (k1 as f64 / 2.0).round() as usize;
    let mut out = base.clone();
    for &q in &base {
        let candidate = oracle_reciprocal(sorted, q, half);
        let overlap = base.intersection(&candidate).count();
        if 3 * overlap >= 2 * candidate.len() {
            out.extend(candidate.iter().copied());
        }
    }
    out
}

/// Set-based Jaccard distance: `1 - |a ∩ b| / |a ∪ b|`.
pub fn oracle_set_jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    if union == 0 {
        1.0
    } else {
        1.0 - inter as f64 / union as f64
    }
}

/// Exhaustive precision walk: precision sampled at each positive's rank,
/// averaged over all positives. `relevant[g]` marks gallery entries matching
/// the probe id; `junk[g]` entries are skipped entirely.
pub fn oracle_average_precision(order: &[u32], relevant: &[bool], junk: &[bool]) -> Option<f64> {
    let total: usize = order
        .iter()
        .filter(|&&g| relevant[g as usize] && !junk[g as usize])
        .count();
    if total == 0 {
        return None;
    }
    let mut rank = 0usize;
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    for &g in order {
        let g = g as usize;
        if junk[g] {
            continue;
        }
        rank += 1;
        if relevant[g] {
            hits += 1;
            sum += hits as f64 / rank as f64;
        }
    }
    Some(sum / total as f64)
}

/// Rank (1-based, junk skipped) of the first relevant entry.
pub fn oracle_first_match(order: &[u32], relevant: &[bool], junk: &[bool]) -> Option<usize> {
    let mut rank = 0usize;
    for &g in order {
        let g = g as usize;
        if junk[g] {
            continue;
        }
        rank += 1;
        if relevant[g] {
            return Some(rank);
        }
    }
    None
}
