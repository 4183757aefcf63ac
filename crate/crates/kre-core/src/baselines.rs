//! Reference re-ranking baselines for comparative evaluation.

use rayon::prelude::*;

use crate::distance::{pair_distance, MetricSpec};
use crate::error::{Error, Result};
use crate::types::{DistanceMatrix, EmbeddingSet, RankedResult};

/// Ranks the gallery by the original distance only, no re-ranking. Reported
/// distances are the matrix values widened to `f64`.
pub fn original_ranking(dist: &DistanceMatrix) -> Vec<RankedResult> {
    let n_probe = dist.n_probe();
    let n_gallery = dist.n_gallery();
    (0..n_probe)
        .into_par_iter()
        .map(|p| {
            let scored: Vec<(f64, u32)> = (0..n_gallery)
                .map(|g| (dist.value(p, n_probe + g) as f64, g as u32))
                .collect();
            RankedResult::from_scores(p, scored)
        })
        .collect()
}

/// Average query expansion: rank the gallery, average the probe vector with
/// its top-k gallery vectors, and re-query with the expanded vector.
///
/// The probe itself is included in the average (the common convention; the
/// method's one-line description is silent on it). `k = 0` performs no
/// expansion and returns the original ranking exactly. A single round is
/// applied, never iterated.
pub fn average_query_expansion(
    items: &EmbeddingSet,
    n_probe: usize,
    k: usize,
    metric: &MetricSpec,
) -> Result<Vec<RankedResult>> {
    let n = items.len();
    if n_probe > n {
        return Err(Error::InvalidArgs(format!(
            "n_probe = {n_probe} exceeds item count {n}"
        )));
    }
    let n_gallery = n - n_probe;
    if n_gallery == 0 {
        return Err(Error::EmptyGallery { n_total: n });
    }
    if k >= n_gallery && k > 0 {
        return Err(Error::KTooLarge { k, n: n_gallery });
    }
    let dim = items.dim();
    (0..n_probe)
        .into_par_iter()
        .map(|p| -> Result<RankedResult> {
            let probe = items.row(p);
            let mut initial: Vec<(f64, u32)> = Vec::with_capacity(n_gallery);
            for g in 0..n_gallery {
                let d = pair_distance(probe, items.row(n_probe + g), metric)?;
                initial.push((d as f64, g as u32));
            }
            if k == 0 {
                return Ok(RankedResult::from_scores(p, initial));
            }
            let mut by_distance = initial.clone();
            by_distance.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

            // mean of the probe and its top-k gallery vectors, in f64
            let mut acc = vec![0.0f64; dim];
            for (slot, v) in acc.iter_mut().zip(probe) {
                *slot += *v as f64;
            }
            for &(_, g) in by_distance.iter().take(k) {
                let row = items.row(n_probe + g as usize);
                for (slot, v) in acc.iter_mut().zip(row) {
                    *slot += *v as f64;
                }
            }
            let count = (k + 1) as f64;
            let expanded: Vec<f32> = acc.into_iter().map(|v| (v / count) as f32).collect();

            let rescored: Vec<(f64, u32)> = (0..n_gallery)
                .map(|g| {
                    pair_distance(&expanded, items.row(n_probe + g), metric)
                        .map(|d| (d as f64, g as u32))
                })
                .collect::<Result<_>>()?;
            Ok(RankedResult::from_scores(p, rescored))
        })
        .collect()
}
