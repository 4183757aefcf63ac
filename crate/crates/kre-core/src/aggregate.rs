//! Final distance blending, batch re-ranking, and the offline/online split.
//!
//! Batch mode puts every probe into the union set together with the gallery
//! (probes first), matching how retrieval experiments are usually run: all
//! queries known up front, so probes are allowed to inform each other's
//! neighbor structure. Single-probe mode ([`GalleryIndex::query_one`]) unions
//! only `{probe} ∪ gallery`; the two modes agree bit for bit when there is
//! exactly one probe, and differ only when probes are mutually informative.
//!
//! The pipeline: pairwise distances → per-item scale normalization → neighbor
//! table → expanded reciprocal set per item → Gaussian-weighted encoding →
//! local query expansion → Jaccard matrix → affine blend with the original
//! distance → per-probe ascending sort over the gallery. Every stage is a
//! pure per-item map, so worker count never changes the output.
//!
//! Normalization only rescales each item's distance vector, so the neighbor
//! table is built straight on the raw matrix (same order, no rounding
//! hazards); the normalized values feed the kernel weights and the final
//! blend.

use rayon::prelude::*;

use crate::distance::{column_scales, pair_distance, pairwise_distance, MetricSpec};
use crate::encoding::{encode_members, lqe_from, EncodingMode, ReciprocalFeature};
use crate::error::{Error, Result};
use crate::jaccard::jaccard_matrix;
use crate::neighbors::{argsort_row, expanded_members, NeighborTable, TopK};
use crate::types::{DistanceMatrix, EmbeddingSet, RankedResult, RerankParams};

/// Hard ceiling on the union size unless overridden: the dense `N x N`
/// matrix is the dominant cost (~3.6 GB of f32 at 30k items), and refusing
/// larger inputs beats thrashing.
pub const DEFAULT_MAX_ITEMS: usize = 30_000;

/// Environment variable that overrides [`DEFAULT_MAX_ITEMS`].
pub const MAX_ITEMS_ENV: &str = "KRE_MAX_ITEMS";

/// Engine configuration beyond the three core hyperparameters.
#[derive(Debug, Clone)]
pub struct RerankOptions {
    pub params: RerankParams,
    /// Rescale distances per item before the kernel and the final blend.
    /// On by default: the kernel weights and the affine blend both assume
    /// distances in `[0, 1]`. Disabling it changes weights but never
    /// neighbor order.
    pub normalize: bool,
    pub encoding: EncodingMode,
    /// Overrides the item cap; `None` falls back to `KRE_MAX_ITEMS` or
    /// [`DEFAULT_MAX_ITEMS`].
    pub max_items: Option<usize>,
}

impl Default for RerankOptions {
    fn default() -> Self {
        Self {
            params: RerankParams::default(),
            normalize: true,
            encoding: EncodingMode::Gaussian,
            max_items: None,
        }
    }
}

impl RerankOptions {
    pub fn with_params(params: RerankParams) -> Self {
        Self {
            params,
            ..Self::default()
        }
    }

    fn cap(&self) -> usize {
        if let Some(cap) = self.max_items {
            return cap;
        }
        std::env::var(MAX_ITEMS_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(DEFAULT_MAX_ITEMS)
    }
}

/// The affine blend of original and Jaccard distance:
/// `(1 - lambda) * d_jaccard + lambda * d_orig`.
/// `lambda = 1` returns the original distance exactly; `lambda = 0` returns
/// the Jaccard distance exactly.
pub fn final_distance(d_orig: f64, d_jaccard: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * d_jaccard + lambda * d_orig
}

/// Scaled distance lookup shared by the batch and single-probe paths.
/// `d(item, other)` is the distance between the two items under `item`'s
/// uniform scale, exactly the value `normalize_distances` would store.
trait ScaledDistance: Sync {
    fn d(&self, item: usize, other: usize) -> f32;
}

struct BatchScaled<'a> {
    dist: &'a DistanceMatrix,
    scales: Vec<f32>,
}

impl<'a> BatchScaled<'a> {
    fn new(dist: &'a DistanceMatrix, normalize: bool) -> Self {
        let scales = if normalize {
            column_scales(dist)
        } else {
            vec![1.0; dist.n_total()]
        };
        Self { dist, scales }
    }
}

impl ScaledDistance for BatchScaled<'_> {
    fn d(&self, item: usize, other: usize) -> f32 {
        self.dist.value(item, other) / self.scales[item]
    }
}

fn run_pipeline<T: TopK + Sync, S: ScaledDistance>(
    src: &T,
    scaled: &S,
    n_probe: usize,
    params: &RerankParams,
    encoding: EncodingMode,
) -> Result<Vec<RankedResult>> {
    let n = src.n_items();
    let expanded: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map(|i| expanded_members(src, i, params.k1))
        .collect();
    let features: Vec<ReciprocalFeature> = expanded
        .into_par_iter()
        .enumerate()
        .map(|(i, members)| {
            encode_members(i as u32, &members, n, encoding, |g| scaled.d(i, g as usize))
        })
        .collect();
    let features = lqe_from(&features, src, params.k2);
    let jac = jaccard_matrix(&features, n_probe)?;
    let n_gallery = n - n_probe;
    let lambda = params.lambda;
    Ok((0..n_probe)
        .into_par_iter()
        .map(|p| {
            let scored: Vec<(f64, u32)> = (0..n_gallery)
                .map(|g| {
                    let d_orig = scaled.d(p, n_probe + g) as f64;
                    (final_distance(d_orig, jac.value(p, g), lambda), g as u32)
                })
                .collect();
            RankedResult::from_scores(p, scored)
        })
        .collect())
}

fn check_shape(n: usize, n_probe: usize, opts: &RerankOptions) -> Result<RerankParams> {
    let cap = opts.cap();
    if n > cap {
        return Err(Error::TooManyItems { n, cap });
    }
    if n_probe == n {
        return Err(Error::EmptyGallery { n_total: n });
    }
    opts.params.validated(n)
}

/// Re-ranks every probe of a precomputed distance matrix.
///
/// The matrix covers the probe/gallery union with probes first (see
/// [`DistanceMatrix::n_probe`]). Output rankings are over gallery-local
/// indices and never contain a probe.
pub fn rerank_distances(dist: &DistanceMatrix, opts: &RerankOptions) -> Result<Vec<RankedResult>> {
    let n = dist.n_total();
    let n_probe = dist.n_probe();
    let params = check_shape(n, n_probe, opts)?;
    if n_probe == 0 {
        return Ok(Vec::new());
    }
    let table = NeighborTable::build(dist, params.k1)?;
    let scaled = BatchScaled::new(dist, opts.normalize);
    run_pipeline(&table, &scaled, n_probe, &params, opts.encoding)
}

/// Computes pairwise distances for `items` under `metric`, then re-ranks.
/// The first `n_probe` rows are probes.
pub fn rerank_embeddings(
    items: &EmbeddingSet,
    n_probe: usize,
    metric: &MetricSpec,
    opts: &RerankOptions,
) -> Result<Vec<RankedResult>> {
    check_shape(items.len(), n_probe, opts)?;
    let dist = pairwise_distance(items, metric, n_probe)?;
    rerank_distances(&dist, opts)
}

/// Precomputed gallery-side state for online queries: raw gallery-gallery
/// distances, their full argsort, and per-column maxima. Building this once
/// amortizes all quadratic work; each query then costs `O(N)` distance
/// evaluations plus the set algebra on short prefixes.
///
/// Reciprocal sets, encodings, and the local query expansion are recomputed
/// per query: inserting the probe into the union perturbs normalization
/// scales, top-k lists at rank <= k1, and the expansion means, so frozen
/// gallery features could not reproduce the batch output bit for bit.
#[derive(Debug, Clone)]
pub struct GalleryIndex {
    gallery: EmbeddingSet,
    metric: MetricSpec,
    raw: DistanceMatrix,
    table: NeighborTable,
    gallery_scales_raw: Vec<f32>,
    opts: RerankOptions,
}

/// Builds the offline gallery index. Parameters are validated against the
/// query-time union size `n_gallery + 1`.
pub fn build_gallery_index(
    gallery: &EmbeddingSet,
    metric: &MetricSpec,
    opts: &RerankOptions,
) -> Result<GalleryIndex> {
    let n_gallery = gallery.len();
    let n_union = n_gallery + 1;
    let cap = opts.cap();
    if n_union > cap {
        return Err(Error::TooManyItems { n: n_union, cap });
    }
    let params = opts.params.validated(n_union)?;
    let raw = pairwise_distance(gallery, metric, 0)?;
    // cutoff k1 can equal n_gallery here; prefixes are completed with the
    // probe at query time
    let table = NeighborTable::build(&raw, params.k1.min(n_gallery))?;
    let gallery_scales_raw: Vec<f32> = (0..n_gallery)
        .map(|g| raw.row(g).iter().copied().fold(0.0f32, f32::max))
        .collect();
    Ok(GalleryIndex {
        gallery: gallery.clone(),
        metric: metric.clone(),
        raw,
        table,
        gallery_scales_raw,
        opts: opts.clone(),
    })
}

/// Union view for one query: item 0 is the probe, item `g + 1` is gallery
/// item `g`. Prefixes splice the probe into the precomputed gallery argsort
/// rows; ties go to the probe, whose union index 0 is smaller than any
/// gallery index.
struct UnionPrefixes {
    rows: Vec<Vec<u32>>,
}

impl TopK for UnionPrefixes {
    fn n_items(&self) -> usize {
        self.rows.len()
    }

    fn prefix(&self, item: usize, k: usize) -> &[u32] {
        &self.rows[item][..k]
    }
}

struct QueryScaled<'a> {
    raw: &'a DistanceMatrix,
    probe_row: &'a [f32],
    scales: Vec<f32>,
}

impl ScaledDistance for QueryScaled<'_> {
    fn d(&self, item: usize, other: usize) -> f32 {
        let raw = match (item, other) {
            (0, 0) => 0.0,
            (0, g) => self.probe_row[g - 1],
            (g, 0) => self.probe_row[g - 1],
            (a, b) => self.raw.value(a - 1, b - 1),
        };
        raw / self.scales[item]
    }
}

impl GalleryIndex {
    pub fn n_gallery(&self) -> usize {
        self.gallery.len()
    }

    pub fn params(&self) -> RerankParams {
        self.opts.params
    }

    /// Ranks the gallery for a single probe vector against the frozen index.
    /// Equivalent, bit for bit, to batch re-ranking of the
    /// `{probe} ∪ gallery` union with `n_probe = 1`.
    pub fn query_one(&self, probe: &[f32]) -> Result<RankedResult> {
        if probe.len() != self.gallery.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.gallery.dim(),
                got: probe.len(),
            });
        }
        if probe.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { row: 0 });
        }
        let n_gallery = self.gallery.len();
        let n_union = n_gallery + 1;
        let params = self.opts.params.validated(n_union)?;
        let k1 = params.k1;

        let probe_row: Vec<f32> = (0..n_gallery)
            .into_par_iter()
            .map(|g| pair_distance(probe, self.gallery.row(g), &self.metric))
            .collect::<Result<_>>()?;

        // per-item scales over the union, matching what the batch path
        // derives from its column maxima
        let scales = if self.opts.normalize {
            let mut s = Vec::with_capacity(n_union);
            let probe_max = probe_row.iter().copied().fold(0.0f32, f32::max);
            s.push(if probe_max == 0.0 { 1.0 } else { probe_max });
            for (&gallery_max, &to_probe) in self.gallery_scales_raw.iter().zip(&probe_row) {
                let m = gallery_max.max(to_probe);
                s.push(if m == 0.0 { 1.0 } else { m });
            }
            s
        } else {
            vec![1.0; n_union]
        };

        let prefixes = self.union_prefixes(&probe_row, k1);
        let scaled = QueryScaled {
            raw: &self.raw,
            probe_row: &probe_row,
            scales,
        };
        let mut results = run_pipeline(&prefixes, &scaled, 1, &params, self.opts.encoding)?;
        Ok(results.pop().expect("single probe produces one result"))
    }

    fn union_prefixes(&self, probe_row: &[f32], k1: usize) -> UnionPrefixes {
        let n_gallery = self.gallery.len();
        let n_union = n_gallery + 1;
        let len = k1.min(n_union);
        let mut rows = Vec::with_capacity(n_union);

        // probe row: full argsort of [0, probe_row...] truncated to k1
        let mut probe_vec = Vec::with_capacity(n_union);
        probe_vec.push(0.0f32);
        probe_vec.extend_from_slice(probe_row);
        let mut probe_order = argsort_row(&probe_vec);
        probe_order.truncate(len);
        rows.push(probe_order);

        for (g, &d_probe) in probe_row.iter().enumerate() {
            let gallery_row = self.table.row(g);
            let raw_row = self.raw.row(g);
            let mut out = Vec::with_capacity(len);
            let mut inserted = false;
            let mut it = gallery_row.iter();
            while out.len() < len {
                match it.next() {
                    Some(&j) => {
                        // probe precedes j on a tie: union index 0 is minimal
                        if !inserted && raw_row[j as usize] >= d_probe {
                            out.push(0);
                            inserted = true;
                            if out.len() == len {
                                break;
                            }
                        }
                        out.push(j + 1);
                    }
                    None => {
                        if !inserted {
                            out.push(0);
                            inserted = true;
                        } else {
                            break;
                        }
                    }
                }
            }
            rows.push(out);
        }
        UnionPrefixes { rows }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counters;
    use crate::synth::generate_synthetic;

    fn embeddings_1d(xs: &[f32]) -> EmbeddingSet {
        EmbeddingSet::new(xs.to_vec(), 1, None, None).unwrap()
    }

    #[test]
    fn blend_extremes_return_each_side_exactly() {
        assert_eq!(final_distance(0.43, 0.9, 1.0), 0.43);
        assert_eq!(final_distance(0.43, 0.9, 0.0), 0.9);
    }

    #[test]
    fn blend_mixes_affinely() {
        // 0.7 * 0.2 + 0.3 * 0.4 = 0.26
        assert!((final_distance(0.4, 0.2, 0.3) - 0.26).abs() < 1e-12);
    }

    #[test]
    fn single_gallery_item_is_always_rank_one() {
        let set = embeddings_1d(&[0.0, 5.0]);
        let opts = RerankOptions::with_params(RerankParams::new(1, 1, 0.3));
        let out = rerank_embeddings(&set, 1, &MetricSpec::SquaredEuclidean, &opts).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].order, vec![0]);
    }

    #[test]
    fn all_probes_means_empty_gallery() {
        let set = embeddings_1d(&[0.0, 1.0, 2.0]);
        let opts = RerankOptions::with_params(RerankParams::new(1, 1, 0.3));
        let err = rerank_embeddings(&set, 3, &MetricSpec::SquaredEuclidean, &opts).unwrap_err();
        assert!(matches!(err, Error::EmptyGallery { n_total: 3 }));
    }

    #[test]
    fn item_cap_is_enforced() {
        let set = embeddings_1d(&[0.0, 1.0, 2.0, 3.0]);
        let mut opts = RerankOptions::with_params(RerankParams::new(1, 1, 0.3));
        opts.max_items = Some(3);
        let err = rerank_embeddings(&set, 1, &MetricSpec::SquaredEuclidean, &opts).unwrap_err();
        assert!(matches!(err, Error::TooManyItems { n: 4, cap: 3 }));
    }

    #[test]
    fn zero_probes_produce_no_results() {
        let set = embeddings_1d(&[0.0, 1.0, 2.0]);
        let opts = RerankOptions::with_params(RerankParams::new(2, 1, 0.3));
        let out = rerank_embeddings(&set, 0, &MetricSpec::SquaredEuclidean, &opts).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn rankings_are_gallery_permutations_with_monotone_distances() {
        let set = generate_synthetic(6, 5, 8, 0.1, 99).unwrap();
        let opts = RerankOptions::with_params(RerankParams::new(8, 3, 0.3));
        let out = rerank_embeddings(&set, 6, &MetricSpec::SquaredEuclidean, &opts).unwrap();
        assert_eq!(out.len(), 6);
        let n_gallery = set.len() - 6;
        for r in &out {
            let mut seen = r.order.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..n_gallery as u32).collect::<Vec<_>>());
            for w in r.distances.windows(2) {
                assert!(w[0] <= w[1]);
            }
        }
    }

    #[test]
    fn probe_identical_to_gallery_item_ranks_it_first() {
        let set = embeddings_1d(&[3.0, 9.0, 3.0, 4.0, 20.0]);
        let opts = RerankOptions::with_params(RerankParams::new(2, 1, 0.3));
        let out = rerank_embeddings(&set, 1, &MetricSpec::SquaredEuclidean, &opts).unwrap();
        // gallery-local index of the duplicate (union index 2) is 1
        assert_eq!(out[0].order[0], 1);
        assert_eq!(out[0].distances[0], 0.0);
    }

    #[test]
    fn equidistant_gallery_items_resolve_by_index() {
        let set = embeddings_1d(&[0.0, 1.0, -1.0, 50.0]);
        let opts = RerankOptions::with_params(RerankParams::new(2, 1, 1.0));
        let out = rerank_embeddings(&set, 1, &MetricSpec::SquaredEuclidean, &opts).unwrap();
        assert_eq!(out[0].order[0], 0);
        assert_eq!(out[0].order[1], 1);
    }

    #[test]
    fn lambda_one_reproduces_original_distance_order() {
        let set = generate_synthetic(5, 4, 6, 0.2, 7).unwrap();
        let n_probe = 5;
        let opts = RerankOptions::with_params(RerankParams::new(6, 2, 1.0));
        let out = rerank_embeddings(&set, n_probe, &MetricSpec::SquaredEuclidean, &opts).unwrap();
        let dist = pairwise_distance(&set, &MetricSpec::SquaredEuclidean, n_probe).unwrap();
        let scaled = BatchScaled::new(&dist, true);
        for r in &out {
            let mut expected: Vec<(f64, u32)> = (0..dist.n_gallery())
                .map(|g| (scaled.d(r.probe_index, n_probe + g) as f64, g as u32))
                .collect();
            expected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let expected_order: Vec<u32> = expected.iter().map(|e| e.1).collect();
            assert_eq!(r.order, expected_order);
        }
    }

    #[test]
    fn query_one_matches_batch_with_single_probe_bit_for_bit() {
        let mut state = 4242u64;
        let mut next = move || {
            state = state.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            z ^ (z >> 31)
        };
        for round in 0..10 {
            let n_gallery = 5 + (next() % 25) as usize;
            let dim = 2 + (next() % 5) as usize;
            let gen = |next: &mut dyn FnMut() -> u64, count: usize| -> Vec<f32> {
                (0..count).map(|_| (next() >> 40) as f32 / (1u64 << 24) as f32).collect()
            };
            let gallery =
                EmbeddingSet::new(gen(&mut next, n_gallery * dim), dim, None, None).unwrap();
            let probe = gen(&mut next, dim);
            let k1 = 1 + (next() as usize % n_gallery.min(12));
            let k2 = 1 + (next() as usize % k1);
            let normalize = round % 2 == 0;
            let opts = RerankOptions {
                params: RerankParams::new(k1, k2, 0.3),
                normalize,
                ..Default::default()
            };
            let index = build_gallery_index(&gallery, &MetricSpec::SquaredEuclidean, &opts).unwrap();
            let online = index.query_one(&probe).unwrap();

            let probe_set = EmbeddingSet::new(probe.clone(), dim, None, None).unwrap();
            let union = EmbeddingSet::stack(&probe_set, &gallery).unwrap();
            let batch = rerank_embeddings(&union, 1, &MetricSpec::SquaredEuclidean, &opts).unwrap();
            assert_eq!(online.order, batch[0].order, "round {round}");
            for (a, b) in online.distances.iter().zip(&batch[0].distances) {
                assert_eq!(a.to_bits(), b.to_bits(), "round {round}");
            }
        }
    }

    #[test]
    fn index_reuse_does_no_quadratic_work_per_query() {
        let gallery = generate_synthetic(8, 5, 8, 0.1, 3).unwrap();
        let opts = RerankOptions::with_params(RerankParams::new(6, 2, 0.3));
        let index = build_gallery_index(&gallery, &MetricSpec::SquaredEuclidean, &opts).unwrap();
        let pairwise_before = counters::pairwise_builds();
        let tables_before = counters::neighbor_table_builds();
        let probe = gallery.row(0).to_vec();
        for _ in 0..100 {
            index.query_one(&probe).unwrap();
        }
        assert_eq!(counters::pairwise_builds(), pairwise_before);
        assert_eq!(counters::neighbor_table_builds(), tables_before);
    }

    #[test]
    fn gallery_index_validates_params_up_front() {
        let gallery = embeddings_1d(&[0.0, 1.0, 2.0]);
        let opts = RerankOptions::with_params(RerankParams::new(2, 5, 0.3));
        let err = build_gallery_index(&gallery, &MetricSpec::SquaredEuclidean, &opts).unwrap_err();
        assert!(matches!(err, Error::InvalidParams { field: "k2", .. }));
    }

    #[test]
    fn query_one_rejects_wrong_dimension() {
        let gallery = generate_synthetic(3, 3, 4, 0.1, 1).unwrap();
        let opts = RerankOptions::with_params(RerankParams::new(3, 1, 0.3));
        let index = build_gallery_index(&gallery, &MetricSpec::SquaredEuclidean, &opts).unwrap();
        let err = index.query_one(&[0.0; 7]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 4, got: 7 }));
    }

    #[test]
    fn probe_permutation_leaves_each_result_unchanged() {
        let set = generate_synthetic(5, 4, 6, 0.15, 21).unwrap();
        let n_probe = 5;
        let opts = RerankOptions::with_params(RerankParams::new(6, 2, 0.3));
        let base = rerank_embeddings(&set, n_probe, &MetricSpec::SquaredEuclidean, &opts).unwrap();

        // swap probes 0 and 3; gallery untouched
        let dim = set.dim();
        let perm = [3usize, 1, 2, 0, 4];
        let mut data = Vec::with_capacity(set.len() * dim);
        for &p in &perm {
            data.extend_from_slice(set.row(p));
        }
        for g in n_probe..set.len() {
            data.extend_from_slice(set.row(g));
        }
        let permuted = EmbeddingSet::new(data, dim, None, None).unwrap();
        let swapped = rerank_embeddings(&permuted, n_probe, &MetricSpec::SquaredEuclidean, &opts).unwrap();
        for (new_pos, &old_pos) in perm.iter().enumerate() {
            assert_eq!(swapped[new_pos].order, base[old_pos].order);
            for (a, b) in swapped[new_pos].distances.iter().zip(&base[old_pos].distances) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
