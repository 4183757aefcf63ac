//! Seeded synthetic clustered data for desk-scale benchmarks and tests.
//!
//! The generator is fully specified so fixtures reproduce bit for bit across
//! implementations and platforms:
//!
//! * Stream: SplitMix64. State advances by the 64-bit golden-ratio constant
//!   `0x9E3779B97F4A7C15`; each output is the finalizer
//!   `z ^= z >> 30, z *= 0xBF58476D1CE4E5B9; z ^= z >> 27, z *= 0x94D049BB133111EB; z ^= z >> 31`.
//! * Uniforms: the top 53 bits of one output, divided by 2^53, giving a value
//!   in `[0, 1)`. For Box-Muller the first uniform is shifted into `(0, 1]`.
//! * Gaussians: Box-Muller, `z = sqrt(-2 ln u1) * cos(2 pi u2)`; every noise
//!   coordinate consumes exactly two generator outputs.
//! * Draw order: all cluster centers row-major (`n_ids * dim` uniforms), then
//!   per item in cluster-major order, `dim` gaussians each.
//!
//! Output rows are ordered probes-first: the first sample of every cluster
//! forms the leading block (a natural probe set via `n_probe = n_ids`),
//! followed by the remaining samples in cluster-major order. Identities are
//! the cluster numbers; cameras cycle round-robin over [`SYNTH_CAMERAS`]
//! cameras in generation order.

use crate::error::{Error, Result};
use crate::types::EmbeddingSet;

/// Number of cameras the generator cycles through.
pub const SYNTH_CAMERAS: usize = 6;

/// SplitMix64 stream; see the module docs for the exact algorithm.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller; consumes two outputs.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Generates `n_ids` cluster centers uniform in the unit hypercube and
/// `per_id` points per center with isotropic Gaussian noise of standard
/// deviation `noise_sigma` per coordinate. Same seed, same bytes.
pub fn generate_synthetic(
    n_ids: usize,
    per_id: usize,
    dim: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<EmbeddingSet> {
    if n_ids < 2 {
        return Err(Error::InvalidArgs("n_ids must be >= 2".into()));
    }
    if per_id < 2 {
        return Err(Error::InvalidArgs("per_id must be >= 2".into()));
    }
    if dim == 0 {
        return Err(Error::InvalidArgs("dim must be >= 1".into()));
    }
    if !noise_sigma.is_finite() || noise_sigma < 0.0 {
        return Err(Error::InvalidArgs(format!(
            "noise_sigma = {noise_sigma} must be finite and >= 0"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let mut centers = vec![0.0f64; n_ids * dim];
    for c in centers.iter_mut() {
        *c = rng.next_f64();
    }

    let n = n_ids * per_id;
    // cluster-major generation order, reordered probes-first afterwards
    let mut rows = vec![0.0f32; n * dim];
    let mut ids = vec![0i32; n];
    let mut cams = vec![0i32; n];
    for cluster in 0..n_ids {
        for j in 0..per_id {
            let item = cluster * per_id + j;
            let row = &mut rows[item * dim..(item + 1) * dim];
            let center = &centers[cluster * dim..(cluster + 1) * dim];
            for (slot, c) in row.iter_mut().zip(center) {
                *slot = (c + noise_sigma * rng.next_gaussian()) as f32;
            }
            ids[item] = cluster as i32;
            cams[item] = (item % SYNTH_CAMERAS) as i32;
        }
    }

    // probes-first layout: first sample of each cluster, then the rest
    let mut order: Vec<usize> = (0..n_ids).map(|c| c * per_id).collect();
    for cluster in 0..n_ids {
        for j in 1..per_id {
            order.push(cluster * per_id + j);
        }
    }
    let mut data = Vec::with_capacity(n * dim);
    let mut out_ids = Vec::with_capacity(n);
    let mut out_cams = Vec::with_capacity(n);
    for &item in &order {
        data.extend_from_slice(&rows[item * dim..(item + 1) * dim]);
        out_ids.push(ids[item]);
        out_cams.push(cams[item]);
    }
    EmbeddingSet::new(data, dim, Some(out_ids), Some(out_cams))
}
