//! Retrieval over packed codes: exhaustive scan, HNSW and IVF.
//!
//! Every ranking orders by match count descending and breaks ties toward the
//! lower point id.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::codec::{scan_range, PackedCodes};
use crate::error::{IkeError, Result};

pub mod float;
pub mod hnsw;
pub mod ivf;
pub mod kmeans;

pub use hnsw::HnswIndex;
pub use ivf::IvfIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Neighbor {
    pub id: u32,
    pub matches: u32,
}

impl Neighbor {
    /// Rank key: larger is better.
    fn key(&self) -> (u32, Reverse<u32>) {
        (self.matches, Reverse(self.id))
    }
}

impl Ord for Neighbor {
    /// `a < b` means `a` ranks after `b`.
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Ranked neighbors of one query, best first.
pub type SearchResult = Vec<Neighbor>;

/// Bounded collector keeping the `k` best neighbors.
#[derive(Debug)]
pub struct TopK {
    k: usize,
    // Min-heap on rank so the worst kept neighbor is on top.
    heap: BinaryHeap<Reverse<Neighbor>>,
}

impl TopK {
    pub fn new(k: usize) -> TopK {
        TopK { k, heap: BinaryHeap::with_capacity(k + 1) }
    }

    #[inline]
    pub fn push(&mut self, n: Neighbor) {
        if self.heap.len() < self.k {
            self.heap.push(Reverse(n));
        } else if let Some(Reverse(worst)) = self.heap.peek() {
            if n > *worst {
                self.heap.pop();
                self.heap.push(Reverse(n));
            }
        }
    }

    /// Smallest match count that could still enter the list.
    #[inline]
    pub fn threshold(&self) -> Option<u32> {
        (self.heap.len() == self.k).then(|| self.heap.peek().map_or(0, |r| r.0.matches))
    }

    pub fn into_sorted(self) -> SearchResult {
        let mut v: Vec<Neighbor> = self.heap.into_iter().map(|r| r.0).collect();
        v.sort_unstable_by(|a, b| b.cmp(a));
        v
    }
}

pub(crate) fn clamp_k(k: usize, n: usize) -> Result<usize> {
    if k == 0 {
        return Err(IkeError::param("k must be at least 1"));
    }
    if k > n {
        log::warn!("k={k} exceeds the database size {n}; returning {n} results");
    }
    Ok(k.min(n))
}

const SCAN_BLOCK: usize = 4096;

/// The `k` database codes with the most matches against `query`.
pub fn exhaustive_topk(codes: &PackedCodes, query: &[u64], k: usize) -> Result<SearchResult> {
    let k = clamp_k(k, codes.n())?;
    let mut top = TopK::new(k);
    let mut buf = vec![0u32; SCAN_BLOCK.min(codes.n())];
    let mut start = 0;
    while start < codes.n() {
        let len = SCAN_BLOCK.min(codes.n() - start);
        scan_range(codes, query, start, &mut buf[..len])?;
        for (i, &m) in buf[..len].iter().enumerate() {
            top.push(Neighbor { id: (start + i) as u32, matches: m });
        }
        start += len;
    }
    Ok(top.into_sorted())
}

/// [`exhaustive_topk`] for each query code, in parallel over queries.
pub fn exhaustive_batch(codes: &PackedCodes, queries: &PackedCodes, k: usize) -> Result<Vec<SearchResult>> {
    check_compatible(codes, queries)?;
    (0..queries.n()).into_par_iter().map(|q| exhaustive_topk(codes, queries.code(q), k)).collect()
}

pub(crate) fn check_compatible(codes: &PackedCodes, queries: &PackedCodes) -> Result<()> {
    if (codes.t(), codes.n_b()) != (queries.t(), queries.n_b()) {
        return Err(IkeError::Encoding(format!(
            "query codes (t={}, n_b={}) do not match database codes (t={}, n_b={})",
            queries.t(),
            queries.n_b(),
            codes.t(),
            codes.n_b()
        )));
    }
    Ok(())
}
