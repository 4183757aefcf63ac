//! Sparse encoding of expanded reciprocal sets and local query expansion.
//!
//! An expanded reciprocal set is turned into a sparse non-negative vector of
//! length `n_total`: members get weight `e^{-d}` from the (normalized)
//! distance to the owner, everything else is absent. Zeros are never stored,
//! so right after encoding the support equals the expanded set exactly.
//!
//! Local query expansion then replaces every item's vector with the
//! arithmetic mean of the original vectors of its `k2` nearest neighbors.
//! All means read a frozen snapshot of the inputs, so no item ever sees a
//! partially updated neighbor and the result is independent of processing
//! order, safe to compute by concurrent workers.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::neighbors::{NeighborTable, ReciprocalSet, TopK};
use crate::types::DistanceMatrix;

/// Kernel applied to member distances. `Binary` stores 1.0 for every member
/// and exists for exact set-equivalence checks of the Jaccard stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EncodingMode {
    #[default]
    Gaussian,
    Binary,
}

/// Sparse non-negative vector encoding one item's expanded reciprocal set.
/// Entries are sorted by index and all stored weights are positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ReciprocalFeature {
    owner: u32,
    dimension: usize,
    entries: Vec<(u32, f64)>,
}

impl ReciprocalFeature {
    /// Builds a feature from raw `(index, weight)` entries. Entries must be
    /// strictly increasing in index, in range, and strictly positive.
    pub fn from_entries(
        owner: u32,
        dimension: usize,
        entries: Vec<(u32, f64)>,
    ) -> Result<Self> {
        for (pos, &(i, w)) in entries.iter().enumerate() {
            if i as usize >= dimension {
                return Err(Error::InvalidArgs(format!(
                    "entry index {i} out of range for dimension {dimension}"
                )));
            }
            if w <= 0.0 || !w.is_finite() {
                return Err(Error::InvalidArgs(format!(
                    "weight {w} at index {i} must be finite and > 0"
                )));
            }
            if pos > 0 && entries[pos - 1].0 >= i {
                return Err(Error::InvalidArgs(
                    "entries must be strictly increasing in index".into(),
                ));
            }
        }
        Ok(Self {
            owner,
            dimension,
            entries,
        })
    }

    pub fn owner(&self) -> usize {
        self.owner as usize
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// `(index, weight)` pairs sorted by index.
    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    pub fn weight(&self, index: usize) -> f64 {
        match self.entries.binary_search_by_key(&(index as u32), |e| e.0) {
            Ok(pos) => self.entries[pos].1,
            Err(_) => 0.0,
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Dense copy, mostly for oracles and debugging.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension];
        for &(i, w) in &self.entries {
            out[i as usize] = w;
        }
        out
    }
}

pub(crate) fn encode_members(
    owner: u32,
    members: &[u32],
    dimension: usize,
    mode: EncodingMode,
    dist_to_owner: impl Fn(u32) -> f32,
) -> ReciprocalFeature {
    let entries = members
        .iter()
        .map(|&g| {
            let w = match mode {
                EncodingMode::Gaussian => (-f64::from(dist_to_owner(g))).exp(),
                EncodingMode::Binary => 1.0,
            };
            (g, w)
        })
        .collect();
    ReciprocalFeature {
        owner,
        dimension,
        entries,
    }
}

/// Encodes `rset` against `dist`: members get weight `e^{-dist[owner][g]}`.
/// With distances normalized into `[0, 1]` every weight lies in `[e^-1, 1]`.
pub fn encode(rset: &ReciprocalSet, dist: &DistanceMatrix) -> ReciprocalFeature {
    encode_with_mode(rset, dist, EncodingMode::Gaussian)
}

/// [`encode`] with an explicit kernel choice.
pub fn encode_with_mode(
    rset: &ReciprocalSet,
    dist: &DistanceMatrix,
    mode: EncodingMode,
) -> ReciprocalFeature {
    let owner = rset.owner();
    encode_members(owner as u32, rset.members(), dist.n_total(), mode, |g| {
        dist.value(owner, g as usize)
    })
}

/// Mean of `k2` sparse vectors, merged by index. The accumulation order is
/// fixed (stable sort by index, then neighbor order within an index), so the
/// output is bit-reproducible.
pub(crate) fn mean_of(features: &[&ReciprocalFeature], owner: u32, dimension: usize) -> ReciprocalFeature {
    let count = features.len() as f64;
    let mut pairs: Vec<(u32, f64)> = Vec::with_capacity(
        features.iter().map(|f| f.entries.len()).sum(),
    );
    for f in features {
        pairs.extend_from_slice(&f.entries);
    }
    pairs.sort_by_key(|e| e.0);
    let mut entries: Vec<(u32, f64)> = Vec::with_capacity(pairs.len());
    for (i, w) in pairs {
        match entries.last_mut() {
            Some(last) if last.0 == i => last.1 += w,
            _ => entries.push((i, w)),
        }
    }
    for e in &mut entries {
        e.1 /= count;
    }
    ReciprocalFeature {
        owner,
        dimension,
        entries,
    }
}

pub(crate) fn lqe_from<T: TopK + Sync>(
    features: &[ReciprocalFeature],
    src: &T,
    k2: usize,
) -> Vec<ReciprocalFeature> {
    (0..features.len())
        .into_par_iter()
        .map(|p| {
            let neighbors: Vec<&ReciprocalFeature> = src
                .prefix(p, k2)
                .iter()
                .map(|&g| &features[g as usize])
                .collect();
            mean_of(&neighbors, p as u32, features[p].dimension)
        })
        .collect()
}

/// Replaces every item's feature by the mean of the pre-expansion features of
/// its `k2` nearest neighbors (probes and gallery alike). `k2 = 1` averages
/// over the item itself and reproduces the input bit for bit.
pub fn local_query_expansion(
    features: &[ReciprocalFeature],
    table: &NeighborTable,
    k2: usize,
) -> Result<Vec<ReciprocalFeature>> {
    if features.len() != table.n_items() {
        return Err(Error::InvalidArgs(format!(
            "{} features for {} items",
            features.len(),
            table.n_items()
        )));
    }
    if k2 == 0 || k2 > table.cutoff() {
        return Err(Error::InvalidParams {
            field: "k2",
            message: format!(
                "k2 = {k2} must satisfy 1 <= k2 <= k1 = {}",
                table.cutoff()
            ),
        });
    }
    Ok(lqe_from(features, table, k2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::{normalize_distances, pairwise_distance, MetricSpec};
    use crate::neighbors::{expand_reciprocal, k_reciprocal};
    use crate::types::EmbeddingSet;

    fn matrix_1d(xs: &[f32]) -> DistanceMatrix {
        let set = EmbeddingSet::new(xs.to_vec(), 1, None, None).unwrap();
        pairwise_distance(&set, &MetricSpec::SquaredEuclidean, 0).unwrap()
    }

    #[test]
    fn self_member_gets_weight_one() {
        let d = matrix_1d(&[0.0, 1.0, 5.0]);
        let t = NeighborTable::build(&d, 2).unwrap();
        let r = k_reciprocal(&t, 0, 2).unwrap();
        let f = encode(&r, &d);
        assert_eq!(f.weight(0), 1.0);
        assert_eq!(f.owner(), 0);
        assert_eq!(f.dimension(), 3);
    }

    #[test]
    fn unit_distance_maps_to_inverse_e() {
        let d = matrix_1d(&[0.0, 1.0]);
        let n = normalize_distances(&d);
        let f = encode_members(0, &[0, 1], 2, EncodingMode::Gaussian, |g| n.value(0, g as usize));
        assert!((f.weight(1) - (-1.0f64).exp()).abs() < 1e-9);
        assert!(f.weight(1) <= 1.0 && f.weight(0) <= 1.0);
    }

    #[test]
    fn binary_mode_stores_ones() {
        let d = matrix_1d(&[0.0, 1.0, 2.0]);
        let t = NeighborTable::build(&d, 2).unwrap();
        let r = k_reciprocal(&t, 1, 2).unwrap();
        let f = encode_with_mode(&r, &d, EncodingMode::Binary);
        for &(i, w) in f.entries() {
            assert_eq!(w, 1.0);
            assert!(r.contains(i as usize));
        }
        assert_eq!(f.support_len(), r.len());
    }

    #[test]
    fn support_equals_expanded_set_after_encoding() {
        let d = matrix_1d(&[0.0, 0.5, 1.0, 7.0, 7.5]);
        let t = NeighborTable::build(&d, 3).unwrap();
        for item in 0..5 {
            let star = expand_reciprocal(&t, item, 3).unwrap();
            let f = encode(&star, &d);
            let support: Vec<u32> = f.entries().iter().map(|e| e.0).collect();
            assert_eq!(support, star.members());
            assert!(f.entries().iter().all(|e| e.1 > 0.0));
        }
    }

    fn feature(owner: u32, dim: usize, entries: &[(u32, f64)]) -> ReciprocalFeature {
        ReciprocalFeature::from_entries(owner, dim, entries.to_vec()).unwrap()
    }

    /// Dense-vector oracle for the expansion mean.
    fn oracle_mean(features: &[&ReciprocalFeature], dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for f in features {
            for (i, v) in f.to_dense().into_iter().enumerate() {
                out[i] += v;
            }
        }
        for v in &mut out {
            *v /= features.len() as f64;
        }
        out
    }

    #[test]
    fn expansion_with_k2_one_is_identity() {
        let d = matrix_1d(&[0.0, 1.0, 2.0, 3.0]);
        let t = NeighborTable::build(&d, 2).unwrap();
        let feats: Vec<ReciprocalFeature> = (0..4)
            .map(|i| encode(&expand_reciprocal(&t, i, 2).unwrap(), &d))
            .collect();
        let out = local_query_expansion(&feats, &t, 1).unwrap();
        for (a, b) in feats.iter().zip(&out) {
            assert_eq!(a.entries().len(), b.entries().len());
            for (x, y) in a.entries().iter().zip(b.entries()) {
                assert_eq!(x.0, y.0);
                assert_eq!(x.1.to_bits(), y.1.to_bits());
            }
        }
    }

    #[test]
    fn identical_features_average_to_themselves() {
        let d = matrix_1d(&[1.0, 1.0]);
        let t = NeighborTable::build(&d, 2).unwrap();
        let shared = feature(0, 2, &[(0, 0.25), (1, 0.75)]);
        let feats = vec![shared.clone(), feature(1, 2, &[(0, 0.25), (1, 0.75)])];
        let out = local_query_expansion(&feats, &t, 2).unwrap();
        for f in &out {
            assert_eq!(f.entries(), shared.entries());
        }
    }

    #[test]
    fn three_singleton_features_blend_pairwise() {
        // N(0, 2) = [0, 1]; averaging two indicator vectors yields 0.5 each
        let d = matrix_1d(&[0.0, 1.0, 9.0]);
        let t = NeighborTable::build(&d, 2).unwrap();
        let feats = vec![
            feature(0, 3, &[(0, 1.0)]),
            feature(1, 3, &[(1, 1.0)]),
            feature(2, 3, &[(2, 1.0)]),
        ];
        let out = local_query_expansion(&feats, &t, 2).unwrap();
        assert_eq!(out[0].entries(), &[(0, 0.5), (1, 0.5)]);
        let dense = oracle_mean(&[&feats[0], &feats[1]], 3);
        assert_eq!(out[0].to_dense(), dense);
    }

    #[test]
    fn snapshot_semantics_prevent_sequential_contamination() {
        // if item 1 saw item 0's already-updated vector, its output would
        // contain index 1 with weight 0.25 instead of the snapshot mean
        let d = matrix_1d(&[0.0, 1.0]);
        let t = NeighborTable::build(&d, 2).unwrap();
        let feats = vec![feature(0, 2, &[(0, 1.0)]), feature(1, 2, &[(1, 1.0)])];
        let out = local_query_expansion(&feats, &t, 2).unwrap();
        assert_eq!(out[0].entries(), &[(0, 0.5), (1, 0.5)]);
        assert_eq!(out[1].entries(), &[(0, 0.5), (1, 0.5)]);
    }

    #[test]
    fn expansion_mass_and_support_bounds_hold() {
        let mut state = 41u64;
        let mut next = move || {
            state = state.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            z ^ (z >> 31)
        };
        for _ in 0..20 {
            let n = 5 + (next() % 56) as usize; // up to 60
            let xs: Vec<f32> = (0..n).map(|_| (next() >> 40) as f32 / 1e4).collect();
            let d = matrix_1d(&xs);
            let nd = normalize_distances(&d);
            let k1 = 1 + (next() as usize % (n - 1));
            let t = NeighborTable::build(&nd, k1).unwrap();
            let feats: Vec<ReciprocalFeature> = (0..n)
                .map(|i| encode(&expand_reciprocal(&t, i, k1).unwrap(), &nd))
                .collect();
            let k2 = 1 + (next() as usize % k1);
            let out = local_query_expansion(&feats, &t, k2).unwrap();
            for (p, f) in out.iter().enumerate() {
                // mass bound: mean mass cannot exceed the largest input mass
                let max_in = t.prefix(p, k2)
                    .iter()
                    .map(|&g| feats[g as usize].l1_norm())
                    .fold(0.0f64, f64::max);
                assert!(f.l1_norm() <= max_in + 1e-12);
                // support is exactly the union of averaged supports
                let mut union: Vec<u32> = t
                    .prefix(p, k2)
                    .iter()
                    .flat_map(|&g| feats[g as usize].entries().iter().map(|e| e.0))
                    .collect();
                union.sort_unstable();
                union.dedup();
                let support: Vec<u32> = f.entries().iter().map(|e| e.0).collect();
                assert_eq!(support, union);
                // dense oracle agreement
                let neighbors: Vec<&ReciprocalFeature> = t
                    .prefix(p, k2)
                    .iter()
                    .map(|&g| &feats[g as usize])
                    .collect();
                let dense = oracle_mean(&neighbors, n);
                for (i, v) in f.to_dense().into_iter().enumerate() {
                    assert!((v - dense[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn expansion_validates_k2() {
        let d = matrix_1d(&[0.0, 1.0, 2.0]);
        let t = NeighborTable::build(&d, 2).unwrap();
        let feats = vec![
            feature(0, 3, &[(0, 1.0)]),
            feature(1, 3, &[(1, 1.0)]),
            feature(2, 3, &[(2, 1.0)]),
        ];
        assert!(matches!(
            local_query_expansion(&feats, &t, 0).unwrap_err(),
            Error::InvalidParams { field: "k2", .. }
        ));
        assert!(matches!(
            local_query_expansion(&feats, &t, 3).unwrap_err(),
            Error::InvalidParams { field: "k2", .. }
        ));
    }
}
