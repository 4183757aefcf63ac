//! Pairwise distance computation and scale normalization.
//!
//! The original distance is the squared quadratic form
//! `d(x, y) = (x - y)^T M (x - y)` with `M` the identity for squared
//! Euclidean. Accumulation happens in `f64`; the stored matrix is `f32`
//! (the `N x N` matrix dominates memory).

use rayon::prelude::*;

use crate::counters;
use crate::error::{Error, Result};
use crate::types::{DistanceMatrix, EmbeddingSet, SYMMETRY_TOL};

/// Quadratic forms below zero but above this threshold are clamped to 0;
/// anything more negative means the supplied metric is not PSD.
const PSD_SLACK: f64 = 1e-8;

/// Positive semidefinite matrix for Mahalanobis-style distances.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrix {
    values: Vec<f64>,
    dim: usize,
}

impl MetricMatrix {
    /// Requires a square, symmetric (within 1e-5), finite matrix.
    /// Positive semidefiniteness is not factored up front; it is enforced
    /// lazily by clamping tiny negative quadratic forms and rejecting
    /// anything beyond `-1e-8`.
    pub fn new(values: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || values.len() != dim * dim {
            return Err(Error::NotSquare {
                rows: dim,
                cols: values.len().checked_div(dim).unwrap_or(0),
            });
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row: i / dim });
            }
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                let delta = (values[i * dim + j] - values[j * dim + i]).abs();
                if delta > SYMMETRY_TOL as f64 {
                    return Err(Error::Asymmetric { i, j, delta });
                }
            }
        }
        Ok(Self { values, dim })
    }

    pub fn identity(dim: usize) -> Self {
        let mut values = vec![0.0; dim * dim];
        for i in 0..dim {
            values[i * dim + i] = 1.0;
        }
        Self { values, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Which original distance to compute.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricSpec {
    SquaredEuclidean,
    Mahalanobis(MetricMatrix),
}

impl MetricSpec {
    fn check_dim(&self, dim: usize) -> Result<()> {
        if let MetricSpec::Mahalanobis(m) = self {
            if m.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: m.dim(),
                });
            }
        }
        Ok(())
    }
}

/// Distance between two feature vectors under `metric`, accumulated in `f64`
/// and rounded to `f32` at the end. Quadratic forms in `[-1e-8, 0)` are
/// clamped to zero.
pub(crate) fn pair_distance(a: &[f32], b: &[f32], metric: &MetricSpec) -> Result<f32> {
    let q = match metric {
        MetricSpec::SquaredEuclidean => {
            let mut acc = 0.0f64;
            for (x, y) in a.iter().zip(b) {
                let d = (*x - *y) as f64;
                acc += d * d;
            }
            acc
        }
        MetricSpec::Mahalanobis(m) => {
            let dim = a.len();
            let mut acc = 0.0f64;
            for r in 0..dim {
                let dr = (a[r] - b[r]) as f64;
                let mrow = &m.values()[r * dim..(r + 1) * dim];
                let mut inner = 0.0f64;
                for c in 0..dim {
                    inner += mrow[c] * (a[c] - b[c]) as f64;
                }
                acc += dr * inner;
            }
            acc
        }
    };
    if q < 0.0 {
        if q < -PSD_SLACK {
            return Err(Error::NonPsdMetric {
                value: q,
                row: 0,
                col: 0,
            });
        }
        return Ok(0.0);
    }
    Ok(q as f32)
}

/// Computes the full pairwise distance matrix over `items`.
///
/// Only the upper triangle is evaluated (rows in parallel, disjoint outputs);
/// the lower triangle is mirrored from it, so the matrix is exactly symmetric
/// and identical to a sequential evaluation regardless of worker count.
pub fn pairwise_distance(
    items: &EmbeddingSet,
    metric: &MetricSpec,
    n_probe: usize,
) -> Result<DistanceMatrix> {
    metric.check_dim(items.dim())?;
    let n = items.len();
    if n_probe > n {
        return Err(Error::InvalidArgs(format!(
            "n_probe = {n_probe} exceeds item count {n}"
        )));
    }
    counters::record_pairwise_build();
    // tails[i] holds d(i, j) for j in i+1..n
    let tails: Vec<Vec<f32>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<f32>> {
            let a = items.row(i);
            let mut out = vec![0.0f32; n - i - 1];
            for (offset, slot) in out.iter_mut().enumerate() {
                let j = i + 1 + offset;
                *slot = pair_distance(a, items.row(j), metric).map_err(|e| match e {
                    Error::NonPsdMetric { value, .. } => Error::NonPsdMetric {
                        value,
                        row: i,
                        col: j,
                    },
                    other => other,
                })?;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut values = vec![0.0f32; n * n];
    for (i, tail) in tails.into_iter().enumerate() {
        for (offset, d) in tail.into_iter().enumerate() {
            let j = i + 1 + offset;
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix::from_parts(values, n, n_probe, false))
}

/// Per-item scale factors used by [`normalize_distances`]: the maximum of each
/// column (equivalently, of each row, for the symmetric raw matrix). All-zero
/// columns get a scale of 1 so they pass through unchanged.
pub(crate) fn column_scales(dist: &DistanceMatrix) -> Vec<f32> {
    let n = dist.n_total();
    let mut maxes = vec![0.0f32; n];
    for i in 0..n {
        let row = dist.row(i);
        for (m, v) in maxes.iter_mut().zip(row) {
            if *v > *m {
                *m = *v;
            }
        }
    }
    for m in &mut maxes {
        if *m == 0.0 {
            *m = 1.0;
        }
    }
    maxes
}

/// Rescales distances into `[0, 1]` so the Gaussian kernel downstream is
/// stable across input scales: every column is divided by its maximum and the
/// result is stored transposed, giving each output row a single uniform scale.
/// For the exactly-symmetric matrices this engine produces, that is the same
/// as dividing each row by its own maximum, and the sort order within every
/// row is preserved. All-zero columns pass through unchanged, so a degenerate
/// all-zero matrix is returned as-is.
pub fn normalize_distances(dist: &DistanceMatrix) -> DistanceMatrix {
    let n = dist.n_total();
    let scales = column_scales(dist);
    let mut values = vec![0.0f32; n * n];
    if dist.is_normalized() {
        // Literal path for inputs that are no longer symmetric.
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = dist.value(j, i) / scales[i];
            }
        }
    } else {
        for i in 0..n {
            let row = dist.row(i);
            let out = &mut values[i * n..(i + 1) * n];
            let s = scales[i];
            for (o, v) in out.iter_mut().zip(row) {
                *o = *v / s;
            }
        }
    }
    DistanceMatrix::from_parts(values, n, dist.n_probe(), true)
}
