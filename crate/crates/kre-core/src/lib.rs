//! Retrieval re-ranking with reciprocal-neighbor encoding.
//!
//! Given probe and gallery embeddings (or a precomputed distance matrix),
//! this crate refines the initial distance ranking: each item's expanded
//! reciprocal neighbor set is encoded as a sparse Gaussian-weighted vector,
//! probe/gallery similarity is re-measured with a vectorized Jaccard
//! distance over those vectors, and the final ranking sorts an affine blend
//! of the original and Jaccard distances. CMC and mAP scoring and an average
//! query expansion baseline are included.
//!
//! ```
//! use kre_core::{
//!     evaluate, generate_synthetic, rerank_embeddings, GroundTruth, JunkPolicy, MetricSpec,
//!     RerankOptions,
//! };
//!
//! let set = generate_synthetic(8, 4, 16, 0.1, 7).unwrap();
//! let n_probe = 8; // generator emits one probe per cluster first
//! let results =
//!     rerank_embeddings(&set, n_probe, &MetricSpec::SquaredEuclidean, &RerankOptions::default())
//!         .unwrap();
//! let ids = set.ids().unwrap();
//! let truth = GroundTruth {
//!     probe_ids: ids[..n_probe].to_vec(),
//!     probe_cams: None,
//!     gallery_ids: ids[n_probe..].to_vec(),
//!     gallery_cams: None,
//!     junk: JunkPolicy::None,
//! };
//! let report = evaluate(&results, &truth, 10).unwrap();
//! assert!(report.map > 0.5);
//! ```

pub mod aggregate;
pub mod baselines;
#[doc(hidden)]
pub mod counters;
pub mod distance;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod io;
pub mod jaccard;
pub mod neighbors;
pub mod synth;
pub mod types;

pub use aggregate::{
    build_gallery_index, final_distance, rerank_distances, rerank_embeddings, GalleryIndex,
    RerankOptions, DEFAULT_MAX_ITEMS, MAX_ITEMS_ENV,
};
pub use baselines::{average_query_expansion, original_ranking};
pub use distance::{normalize_distances, pairwise_distance, MetricMatrix, MetricSpec};
pub use encoding::{
    encode, encode_with_mode, local_query_expansion, EncodingMode, ReciprocalFeature,
};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalReport, GroundTruth, JunkPolicy};
pub use jaccard::{jaccard_distance, jaccard_matrix, JaccardMatrix};
pub use neighbors::{expand_reciprocal, k_nearest, k_reciprocal, NeighborTable, ReciprocalSet};
pub use synth::{generate_synthetic, SplitMix64, SYNTH_CAMERAS};
pub use types::{DistanceMatrix, EmbeddingSet, RankedResult, RerankParams, UNKNOWN_CAM};
