//! k-nearest, k-reciprocal, and expanded k-reciprocal neighbor sets.
//!
//! Neighbor lists are full argsorts of each item's distance row, ascending
//! with ties broken by ascending item index. An item's own distance is zero,
//! so it sits at position 0 of its own list unless another item at exactly
//! distance zero has a smaller index. `k`-nearest sets therefore include the
//! item itself, which keeps `|N(p, k)| = k` exact and gives every item a
//! positive self-weight later in the encoding.
//!
//! The reciprocal set of `p` keeps only neighbors that rank `p` inside their
//! own top-k. The expanded set additionally pulls in the half-k reciprocal
//! sets of its members when at least two thirds of such a set already
//! overlaps the original reciprocal set, which recovers hard positives that
//! are close to a member but not to `p` itself.

use rayon::prelude::*;

use crate::counters;
use crate::error::{Error, Result};
use crate::types::DistanceMatrix;

/// Full argsort of every item's distance row.
///
/// `cutoff` records the k the table was built for and serves as the default
/// for set queries; all operations also accept an explicit k.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    rows: Vec<Vec<u32>>,
    cutoff: usize,
}

impl NeighborTable {
    /// Argsorts every row of `dist` in parallel. `cutoff` must satisfy
    /// `1 <= cutoff <= n`.
    pub fn build(dist: &DistanceMatrix, cutoff: usize) -> Result<Self> {
        let n = dist.n_total();
        if cutoff == 0 {
            return Err(Error::InvalidParams {
                field: "k",
                message: "neighbor cutoff must be >= 1".into(),
            });
        }
        if cutoff > n {
            return Err(Error::KTooLarge { k: cutoff, n });
        }
        counters::record_neighbor_table_build();
        let rows: Vec<Vec<u32>> = (0..n)
            .into_par_iter()
            .map(|i| argsort_row(dist.row(i)))
            .collect();
        Ok(Self { rows, cutoff })
    }

    pub fn n_items(&self) -> usize {
        self.rows.len()
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// The full ascending argsort of `item`'s distance row.
    pub fn row(&self, item: usize) -> &[u32] {
        &self.rows[item]
    }
}

pub(crate) fn argsort_row(row: &[f32]) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..row.len() as u32).collect();
    idx.sort_unstable_by(|&a, &b| {
        row[a as usize]
            .total_cmp(&row[b as usize])
            .then(a.cmp(&b))
    });
    idx
}

/// Anything that can serve ordered top-k neighbor prefixes. Implemented by
/// [`NeighborTable`] for batch re-ranking and by the per-query union view
/// built by the gallery index.
pub(crate) trait TopK {
    fn n_items(&self) -> usize;
    /// First `k` entries of `item`'s neighbor list, `k` at most the length
    /// the source was built for.
    fn prefix(&self, item: usize, k: usize) -> &[u32];
}

impl TopK for NeighborTable {
    fn n_items(&self) -> usize {
        self.rows.len()
    }

    fn prefix(&self, item: usize, k: usize) -> &[u32] {
        &self.rows[item][..k]
    }
}

/// Set of items mutually ranked with `owner` inside their top-k lists.
/// Members are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReciprocalSet {
    owner: u32,
    members: Vec<u32>,
}

impl ReciprocalSet {
    pub fn owner(&self) -> usize {
        self.owner as usize
    }

    pub fn members(&self) -> &[u32] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, item: usize) -> bool {
        self.members.binary_search(&(item as u32)).is_ok()
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParams {
            field: "k",
            message: "k must be >= 1".into(),
        });
    }
    if k >= n {
        return Err(Error::KTooLarge { k, n });
    }
    Ok(())
}

/// The ordered top-k list of `item`: the first `k` entries of its argsort row.
pub fn k_nearest(table: &NeighborTable, item: usize, k: usize) -> Result<&[u32]> {
    check_k(k, table.n_items())?;
    Ok(table.prefix(item, k))
}

/// Half-k for the expansion step, rounding .5 away from zero (7 -> 4, 20 -> 10).
pub(crate) fn half_k(k: usize) -> usize {
    k.div_ceil(2)
}

pub(crate) fn reciprocal_members<T: TopK>(src: &T, item: usize, k: usize) -> Vec<u32> {
    let item_u = item as u32;
    let mut members: Vec<u32> = src
        .prefix(item, k)
        .iter()
        .copied()
        .filter(|&j| src.prefix(j as usize, k).contains(&item_u))
        .collect();
    members.sort_unstable();
    members
}

fn sorted_intersection_len(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

fn sorted_union(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

pub(crate) fn expanded_members<T: TopK>(src: &T, item: usize, k1: usize) -> Vec<u32> {
    let base = reciprocal_members(src, item, k1);
    let half = half_k(k1);
    let mut out = base.clone();
    for &q in &base {
        let candidate = reciprocal_members(src, q as usize, half);
        // the overlap gate compares against the original set, in exact
        // integer arithmetic: 3*|base ∩ candidate| >= 2*|candidate|
        let inter = sorted_intersection_len(&base, &candidate);
        if 3 * inter >= 2 * candidate.len() {
            out = sorted_union(&out, &candidate);
        }
    }
    out
}

/// Mutual top-k neighbors of `item`: `{ j in N(item, k) : item in N(j, k) }`.
pub fn k_reciprocal(table: &NeighborTable, item: usize, k: usize) -> Result<ReciprocalSet> {
    check_k(k, table.n_items())?;
    Ok(ReciprocalSet {
        owner: item as u32,
        members: reciprocal_members(table, item, k),
    })
}

/// Reciprocal set of `item` grown by the half-k reciprocal sets of its
/// members, subject to the two-thirds overlap gate. Candidate tests always use
/// the original reciprocal set, so the result is independent of member order,
/// and the union accumulates across all qualifying members in a single pass.
pub fn expand_reciprocal(table: &NeighborTable, item: usize, k1: usize) -> Result<ReciprocalSet> {
    check_k(k1, table.n_items())?;
    Ok(ReciprocalSet {
        owner: item as u32,
        members: expanded_members(table, item, k1),
    })
}
