//! Shared domain types: embeddings, re-ranking parameters, distance matrices,
//! and ranked results.
//!
//! All types here are immutable after construction and safe to share across
//! threads. Probes and gallery items live in a single index space with probes
//! first: indices `0..n_probe` are probes, `n_probe..n_total` are gallery.
//! Probes may therefore appear inside each other's neighbor sets; they are
//! filtered out only when final rankings are emitted.

use crate::error::{Error, Result};

/// Camera label meaning "unknown"; never matches any camera in junk tests.
pub const UNKNOWN_CAM: i32 = -1;

/// Symmetry / zero-diagonal tolerance for distance matrices.
pub(crate) const SYMMETRY_TOL: f32 = 1e-5;

/// Row-major matrix of feature vectors with optional identity and camera
/// labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    data: Vec<f32>,
    n: usize,
    dim: usize,
    ids: Option<Vec<i32>>,
    cams: Option<Vec<i32>>,
}

impl EmbeddingSet {
    /// Validates shape, finiteness and label lengths.
    pub fn new(
        data: Vec<f32>,
        dim: usize,
        ids: Option<Vec<i32>>,
        cams: Option<Vec<i32>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgs("feature dimension must be >= 1".into()));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgs(format!(
                "data length {} is not a positive multiple of dim {dim}",
                data.len()
            )));
        }
        let n = data.len() / dim;
        for (row, chunk) in data.chunks_exact(dim).enumerate() {
            if chunk.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue { row });
            }
        }
        if let Some(ids) = &ids {
            if ids.len() != n {
                return Err(Error::InvalidArgs(format!(
                    "{} ids for {n} rows",
                    ids.len()
                )));
            }
        }
        if let Some(cams) = &cams {
            if cams.len() != n {
                return Err(Error::InvalidArgs(format!(
                    "{} camera labels for {n} rows",
                    cams.len()
                )));
            }
        }
        Ok(Self {
            data,
            n,
            dim,
            ids,
            cams,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn ids(&self) -> Option<&[i32]> {
        self.ids.as_deref()
    }

    pub fn cams(&self) -> Option<&[i32]> {
        self.cams.as_deref()
    }

    /// Stacks `probes` rows in front of `gallery` rows, concatenating labels
    /// when both sides carry them.
    pub fn stack(probes: &EmbeddingSet, gallery: &EmbeddingSet) -> Result<EmbeddingSet> {
        if probes.dim != gallery.dim {
            return Err(Error::DimensionMismatch {
                expected: gallery.dim,
                got: probes.dim,
            });
        }
        let mut data = Vec::with_capacity((probes.n + gallery.n) * probes.dim);
        data.extend_from_slice(&probes.data);
        data.extend_from_slice(&gallery.data);
        let zip = |a: &Option<Vec<i32>>, b: &Option<Vec<i32>>| match (a, b) {
            (Some(a), Some(b)) => {
                let mut v = a.clone();
                v.extend_from_slice(b);
                Some(v)
            }
            _ => None,
        };
        EmbeddingSet::new(
            data,
            probes.dim,
            zip(&probes.ids, &gallery.ids),
            zip(&probes.cams, &gallery.cams),
        )
    }
}

/// Re-ranking hyperparameters.
///
/// `k1` controls the reciprocal neighborhood, `k2` the local query expansion,
/// and `lambda` the weight of the original distance in the final blend.
/// Defaults are `k1 = 20`, `k2 = 6`, `lambda = 0.3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RerankParams {
    pub k1: usize,
    pub k2: usize,
    pub lambda: f64,
}

impl Default for RerankParams {
    fn default() -> Self {
        Self {
            k1: 20,
            k2: 6,
            lambda: 0.3,
        }
    }
}

impl RerankParams {
    pub fn new(k1: usize, k2: usize, lambda: f64) -> Self {
        Self { k1, k2, lambda }
    }

    /// Checks `1 <= k2 <= k1 < n_total` and `lambda in [0, 1]`, returning the
    /// parameters unchanged when they hold. Idempotent.
    pub fn validated(self, n_total: usize) -> Result<Self> {
        if self.k1 == 0 {
            return Err(Error::InvalidParams {
                field: "k1",
                message: "k1 must be >= 1".into(),
            });
        }
        if self.k2 == 0 || self.k2 > self.k1 {
            return Err(Error::InvalidParams {
                field: "k2",
                message: format!("k2 = {} must satisfy 1 <= k2 <= k1 = {}", self.k2, self.k1),
            });
        }
        if self.k1 >= n_total {
            return Err(Error::InvalidParams {
                field: "k1",
                message: format!("k1 = {} must be < n_total = {n_total}", self.k1),
            });
        }
        if !self.lambda.is_finite() || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParams {
                field: "lambda",
                message: format!("lambda = {} must lie in [0, 1]", self.lambda),
            });
        }
        Ok(self)
    }
}

/// Dense pairwise distance matrix over the probe/gallery union.
///
/// Raw matrices are exactly symmetric with a zero diagonal; construction
/// canonicalizes near-symmetric input (mirror entries averaged, diagonal
/// forced to zero) and rejects anything beyond a `1e-5` absolute tolerance.
/// Matrices returned by [`crate::distance::normalize_distances`] carry per-row
/// scales and are generally not symmetric; they are marked via
/// [`DistanceMatrix::is_normalized`].
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    values: Vec<f32>,
    n: usize,
    n_probe: usize,
    normalized: bool,
}

impl DistanceMatrix {
    /// Validates and canonicalizes a raw (un-normalized) matrix.
    pub fn new(values: Vec<f32>, n: usize, n_probe: usize) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::NotSquare {
                rows: n,
                cols: values.len().checked_div(n).unwrap_or(0),
            });
        }
        if n_probe > n {
            return Err(Error::InvalidArgs(format!(
                "n_probe = {n_probe} exceeds item count {n}"
            )));
        }
        let mut values = values;
        for i in 0..n {
            for j in 0..n {
                let v = values[i * n + j];
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue { row: i });
                }
                if v < 0.0 {
                    return Err(Error::InvalidDistance {
                        row: i,
                        col: j,
                        value: v as f64,
                    });
                }
            }
        }
        for i in 0..n {
            let d = values[i * n + i];
            if d.abs() > SYMMETRY_TOL {
                return Err(Error::InvalidDistance {
                    row: i,
                    col: i,
                    value: d as f64,
                });
            }
            values[i * n + i] = 0.0;
            for j in (i + 1)..n {
                let a = values[i * n + j];
                let b = values[j * n + i];
                let delta = (a - b).abs();
                if delta > SYMMETRY_TOL {
                    return Err(Error::Asymmetric {
                        i,
                        j,
                        delta: delta as f64,
                    });
                }
                let avg = 0.5 * (a + b);
                values[i * n + j] = avg;
                values[j * n + i] = avg;
            }
        }
        Ok(Self {
            values,
            n,
            n_probe,
            normalized: false,
        })
    }

    /// Trusted constructor for matrices the engine computed itself.
    pub(crate) fn from_parts(values: Vec<f32>, n: usize, n_probe: usize, normalized: bool) -> Self {
        debug_assert_eq!(values.len(), n * n);
        Self {
            values,
            n,
            n_probe,
            normalized,
        }
    }

    pub fn n_total(&self) -> usize {
        self.n
    }

    pub fn n_probe(&self) -> usize {
        self.n_probe
    }

    pub fn n_gallery(&self) -> usize {
        self.n - self.n_probe
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn value(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Returns a copy with a different probe split.
    pub fn with_n_probe(mut self, n_probe: usize) -> Result<Self> {
        if n_probe > self.n {
            return Err(Error::InvalidArgs(format!(
                "n_probe = {n_probe} exceeds item count {}",
                self.n
            )));
        }
        self.n_probe = n_probe;
        Ok(self)
    }
}

/// Per-probe ranking of the gallery by ascending final distance.
///
/// `order` is a permutation of gallery-local indices `0..n_gallery` (index 0
/// is the first gallery item, i.e. union index `n_probe`). Probe indices never
/// appear. Equal distances are broken by ascending gallery index.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    pub probe_index: usize,
    pub order: Vec<u32>,
    pub distances: Vec<f64>,
}

impl RankedResult {
    /// Sorts `(distance, gallery index)` pairs ascending with index tie-break.
    pub(crate) fn from_scores(probe_index: usize, mut scored: Vec<(f64, u32)>) -> Self {
        scored.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut order = Vec::with_capacity(scored.len());
        let mut distances = Vec::with_capacity(scored.len());
        for (d, g) in scored {
            order.push(g);
            distances.push(d);
        }
        Self {
            probe_index,
            order,
            distances,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_params_validate_against_reference_setting() {
        let p = RerankParams::default();
        assert_eq!((p.k1, p.k2), (20, 6));
        assert!((p.lambda - 0.3).abs() < 1e-15);
        let v = p.validated(100).unwrap();
        assert_eq!(v, p);
        // validating a validated value returns an identical value
        assert_eq!(v.validated(100).unwrap(), v);
    }

    #[test]
    fn params_reject_k2_above_k1() {
        let err = RerankParams::new(5, 6, 0.3).validated(100).unwrap_err();
        match err {
            Error::InvalidParams { field, .. } => assert_eq!(field, "k2"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn params_reject_lambda_outside_unit_interval() {
        let err = RerankParams::new(20, 6, 1.5).validated(100).unwrap_err();
        match err {
            Error::InvalidParams { field, .. } => assert_eq!(field, "lambda"),
            other => panic!("unexpected error {other:?}"),
        }
        let err = RerankParams::new(20, 6, f64::NAN).validated(100).unwrap_err();
        assert!(matches!(err, Error::InvalidParams { field: "lambda", .. }));
    }

    #[test]
    fn params_reject_k1_at_or_above_n_total() {
        let err = RerankParams::new(20, 6, 0.3).validated(20).unwrap_err();
        assert!(matches!(err, Error::InvalidParams { field: "k1", .. }));
        assert!(RerankParams::new(20, 6, 0.3).validated(21).is_ok());
    }

    #[test]
    fn embedding_set_rejects_non_finite_rows() {
        let err = EmbeddingSet::new(vec![0.0, 1.0, f32::NAN, 2.0], 2, None, None).unwrap_err();
        match err {
            Error::NonFiniteValue { row } => assert_eq!(row, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn embedding_set_rejects_bad_shapes_and_label_lengths() {
        assert!(EmbeddingSet::new(vec![], 3, None, None).is_err());
        assert!(EmbeddingSet::new(vec![1.0; 5], 3, None, None).is_err());
        assert!(EmbeddingSet::new(vec![1.0; 6], 3, Some(vec![1]), None).is_err());
        assert!(EmbeddingSet::new(vec![1.0; 6], 3, None, Some(vec![1, 2, 3])).is_err());
        let ok = EmbeddingSet::new(vec![1.0; 6], 3, Some(vec![1, 2]), Some(vec![0, 1])).unwrap();
        assert_eq!(ok.len(), 2);
        assert_eq!(ok.dim(), 3);
        assert_eq!(ok.row(1), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn distance_matrix_canonicalizes_small_asymmetry() {
        // |a - a^T| = 2e-6 is inside tolerance and gets averaged away.
        let m = DistanceMatrix::new(vec![0.0, 1.000001, 0.999999, 0.0], 2, 1).unwrap();
        assert_eq!(m.value(0, 1), m.value(1, 0));
        assert_eq!(m.n_probe(), 1);
        assert_eq!(m.n_gallery(), 1);
    }

    #[test]
    fn distance_matrix_rejects_gross_asymmetry() {
        let err = DistanceMatrix::new(vec![0.0, 1.0, 1.1, 0.0], 2, 0).unwrap_err();
        assert!(matches!(err, Error::Asymmetric { .. }));
    }

    #[test]
    fn distance_matrix_rejects_negative_and_non_finite() {
        assert!(matches!(
            DistanceMatrix::new(vec![0.0, -1.0, -1.0, 0.0], 2, 0).unwrap_err(),
            Error::InvalidDistance { .. }
        ));
        assert!(matches!(
            DistanceMatrix::new(vec![0.0, f32::INFINITY, 1.0, 0.0], 2, 0).unwrap_err(),
            Error::NonFiniteValue { .. }
        ));
    }

    #[test]
    fn distance_matrix_rejects_nonzero_diagonal() {
        let err = DistanceMatrix::new(vec![0.5, 1.0, 1.0, 0.0], 2, 0).unwrap_err();
        assert!(matches!(err, Error::InvalidDistance { row: 0, col: 0, .. }));
        // a diagonal within tolerance is forced to exactly zero
        let m = DistanceMatrix::new(vec![1e-6, 1.0, 1.0, 0.0], 2, 0).unwrap();
        assert_eq!(m.value(0, 0), 0.0);
    }

    #[test]
    fn ranked_result_breaks_ties_by_gallery_index() {
        let r = RankedResult::from_scores(0, vec![(0.5, 2), (0.5, 0), (0.1, 1)]);
        assert_eq!(r.order, vec![1, 0, 2]);
        assert_eq!(r.distances, vec![0.1, 0.5, 0.5]);
    }

    #[test]
    fn probe_split_can_be_redeclared() {
        let m = DistanceMatrix::new(vec![0.0, 1.0, 1.0, 0.0], 2, 0).unwrap();
        let m = m.with_n_probe(1).unwrap();
        assert_eq!(m.n_probe(), 1);
        assert!(m.with_n_probe(3).is_err());
    }
}
