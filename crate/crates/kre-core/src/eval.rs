//! CMC and mAP scoring under a junk-aware single-query protocol.
//!
//! For each probe, junk gallery entries (same identity *and* same camera as
//! the probe, when the policy asks for it) are removed from the ranked list
//! before scoring. A probe with no remaining positive is skipped entirely and
//! excluded from `n_valid_probes` rather than scored as zero.
//!
//! CMC(r) is the fraction of valid probes whose first true match appears at
//! rank <= r. AP samples precision at each positive's rank and averages over
//! the probe's positives; mAP averages AP over valid probes. Interpolated AP
//! variants are deliberately not offered.

use crate::error::{Error, Result};
use crate::types::{RankedResult, UNKNOWN_CAM};

/// Which gallery entries count as junk for a given probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JunkPolicy {
    /// Generic retrieval: nothing is junk.
    #[default]
    None,
    /// Same identity captured by the same camera as the probe. Entries with
    /// an unknown camera are never junk.
    SameCameraSameId,
}

/// Identity and camera labels for both sides of the ranking.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub probe_ids: Vec<i32>,
    pub probe_cams: Option<Vec<i32>>,
    pub gallery_ids: Vec<i32>,
    pub gallery_cams: Option<Vec<i32>>,
    pub junk: JunkPolicy,
}

/// Scores for one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Cumulative match rate at ranks `1..=max_rank`; non-decreasing.
    pub cmc: Vec<f64>,
    /// Mean average precision over valid probes.
    pub map: f64,
    /// Probes that had at least one non-junk positive.
    pub n_valid_probes: usize,
    /// `(probe_index, AP)` for every valid probe, in input order.
    pub ap_per_probe: Vec<(usize, f64)>,
}

/// Order-insensitive sum for the final reductions (pairwise splitting).
fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        n if n <= 8 => xs.iter().sum(),
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// Evaluates ranked results against ground truth.
///
/// `max_rank` bounds the CMC vector only; AP always walks the full cleaned
/// list. Label vectors must match the ranking shapes.
pub fn evaluate(
    results: &[RankedResult],
    truth: &GroundTruth,
    max_rank: usize,
) -> Result<EvalReport> {
    if max_rank == 0 {
        return Err(Error::InvalidArgs("max_rank must be >= 1".into()));
    }
    let n_gallery = truth.gallery_ids.len();
    if let Some(cams) = &truth.gallery_cams {
        if cams.len() != n_gallery {
            return Err(Error::LabelMismatch(format!(
                "{} gallery cameras for {n_gallery} gallery ids",
                cams.len()
            )));
        }
    }
    if let Some(cams) = &truth.probe_cams {
        if cams.len() != truth.probe_ids.len() {
            return Err(Error::LabelMismatch(format!(
                "{} probe cameras for {} probe ids",
                cams.len(),
                truth.probe_ids.len()
            )));
        }
    }
    if truth.junk == JunkPolicy::SameCameraSameId
        && (truth.probe_cams.is_none() || truth.gallery_cams.is_none())
    {
        return Err(Error::LabelMismatch(
            "camera-based junk policy requires camera labels on both sides".into(),
        ));
    }

    let mut cmc_hits = vec![0usize; max_rank];
    let mut aps = Vec::with_capacity(results.len());
    let mut ap_per_probe = Vec::with_capacity(results.len());

    for result in results {
        if result.order.len() != n_gallery {
            return Err(Error::LabelMismatch(format!(
                "ranking over {} gallery items but {n_gallery} gallery ids",
                result.order.len()
            )));
        }
        let p = result.probe_index;
        if p >= truth.probe_ids.len() {
            return Err(Error::LabelMismatch(format!(
                "probe index {p} outside {} probe ids",
                truth.probe_ids.len()
            )));
        }
        let pid = truth.probe_ids[p];
        let pcam = truth.probe_cams.as_ref().map_or(UNKNOWN_CAM, |c| c[p]);

        let is_junk = |g: usize| -> bool {
            match truth.junk {
                JunkPolicy::None => false,
                JunkPolicy::SameCameraSameId => {
                    let gcam = truth.gallery_cams.as_ref().map_or(UNKNOWN_CAM, |c| c[g]);
                    truth.gallery_ids[g] == pid && gcam == pcam && pcam != UNKNOWN_CAM
                }
            }
        };

        // count positives surviving junk removal
        let total_positives = (0..n_gallery)
            .filter(|&g| truth.gallery_ids[g] == pid && !is_junk(g))
            .count();
        if total_positives == 0 {
            continue; // skipped, not scored
        }

        // walk the cleaned list accumulating precision at each positive
        let mut rank = 0usize;
        let mut hits = 0usize;
        let mut ap_sum = 0.0f64;
        let mut first_hit: Option<usize> = None;
        for &g in &result.order {
            let g = g as usize;
            if is_junk(g) {
                continue;
            }
            rank += 1;
            if truth.gallery_ids[g] == pid {
                hits += 1;
                ap_sum += hits as f64 / rank as f64;
                if first_hit.is_none() {
                    first_hit = Some(rank);
                }
                if hits == total_positives {
                    break;
                }
            }
        }
        let ap = ap_sum / total_positives as f64;
        aps.push(ap);
        ap_per_probe.push((p, ap));
        if let Some(r) = first_hit {
            if r <= max_rank {
                cmc_hits[r - 1] += 1;
            }
        }
    }

    let n_valid = aps.len();
    let map = if n_valid == 0 {
        0.0
    } else {
        pairwise_sum(&aps) / n_valid as f64
    };
    let mut cmc = Vec::with_capacity(max_rank);
    let mut cum = 0usize;
    for h in cmc_hits {
        cum += h;
        cmc.push(if n_valid == 0 {
            0.0
        } else {
            cum as f64 / n_valid as f64
        });
    }
    Ok(EvalReport {
        cmc,
        map,
        n_valid_probes: n_valid,
        ap_per_probe,
    })
}
