//! Exhaustive inner-product scan over float embeddings: the uncompressed
//! baseline, and the source of cosine ground truth after normalization.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{IkeError, Result};
use crate::types::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredId {
    pub id: u32,
    pub score: f32,
}

impl Eq for ScoredId {}

impl Ord for ScoredId {
    /// Greater ranks better: higher score, then lower id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for ScoredId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    // Eight independent accumulators let the compiler vectorize the loop.
    let mut acc = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f32 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f32>() + tail
}

/// The `k` rows of `corpus` with the largest inner product with `query`.
pub fn dot_topk(corpus: &EmbeddingMatrix, query: &[f32], k: usize) -> Result<Vec<ScoredId>> {
    if query.len() != corpus.d() {
        return Err(IkeError::param(format!("query has dimension {}, corpus has {}", query.len(), corpus.d())));
    }
    if k == 0 {
        return Err(IkeError::param("k must be at least 1"));
    }
    let k = k.min(corpus.n());
    let mut heap: BinaryHeap<Reverse<ScoredId>> = BinaryHeap::with_capacity(k + 1);
    for (i, row) in corpus.rows().enumerate() {
        let hit = ScoredId { id: i as u32, score: dot(row, query) };
        if heap.len() < k {
            heap.push(Reverse(hit));
        } else if hit > heap.peek().unwrap().0 {
            heap.pop();
            heap.push(Reverse(hit));
        }
    }
    let mut out: Vec<ScoredId> = heap.into_iter().map(|r| r.0).collect();
    out.sort_unstable_by(|a, b| b.cmp(a));
    Ok(out)
}

/// Cosine top-`k` ids for every query, in parallel over queries.
pub fn cosine_ground_truth(corpus: &EmbeddingMatrix, queries: &EmbeddingMatrix, k: usize) -> Result<Vec<Vec<u32>>> {
    let mut c = corpus.clone();
    c.l2_normalize();
    let mut q = queries.clone();
    q.l2_normalize();
    (0..q.n())
        .into_par_iter()
        .map(|i| Ok(dot_topk(&c, q.row(i), k)?.into_iter().map(|h| h.id).collect()))
        .collect()
}
