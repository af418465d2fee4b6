//! HNSW graph over packed codes with distance `t - match_count`.
//!
//! Standard construction: geometric level assignment with normalization
//! `1/ln(M)`, points inserted in id order, neighbor lists chosen with the
//! usual diversity heuristic and capped at `M` (`2M` on layer 0).

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{Read, Write};

use rand::Rng;

use crate::codec::{match_count_raw, truncated, PackedCodes, SegmentMask};
use crate::error::{IkeError, Result};
use crate::index::{clamp_k, Neighbor, SearchResult};
use crate::rng::{stream, Domain};

pub const HNSW_MAGIC: &[u8; 4] = b"IKEH";
pub const DEFAULT_M: usize = 32;
pub const DEFAULT_EF_CONSTRUCTION: usize = 500;

/// (distance, id); ordering on the tuple gives deterministic tie-breaks.
type Cand = (u32, u32);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HnswIndex {
    m: usize,
    ef_construction: usize,
    entry: u32,
    max_level: usize,
    /// `links[node][level]`.
    links: Vec<Vec<Vec<u32>>>,
}

struct Dist<'a> {
    codes: &'a PackedCodes,
    mask: SegmentMask,
}

impl Dist<'_> {
    #[inline]
    fn to_code(&self, id: u32, q: &[u64]) -> u32 {
        let t = self.codes.t();
        t as u32 - match_count_raw(self.codes.code(id as usize), q, t, self.codes.n_b(), self.mask)
    }

    #[inline]
    fn between(&self, a: u32, b: u32) -> u32 {
        self.to_code(a, self.codes.code(b as usize))
    }
}

struct Visited {
    bits: Vec<u64>,
    touched: Vec<usize>,
}

impl Visited {
    fn new(n: usize) -> Self {
        Visited { bits: vec![0; n.div_ceil(64)], touched: Vec::new() }
    }

    /// Marks `id`; returns true if it was not yet marked.
    #[inline]
    fn insert(&mut self, id: u32) -> bool {
        let (w, b) = (id as usize / 64, id % 64);
        let fresh = self.bits[w] & (1 << b) == 0;
        if fresh {
            if self.bits[w] == 0 {
                self.touched.push(w);
            }
            self.bits[w] |= 1 << b;
        }
        fresh
    }

    fn clear(&mut self) {
        for &w in &self.touched {
            self.bits[w] = 0;
        }
        self.touched.clear();
    }
}

impl HnswIndex {
    pub fn build(codes: &PackedCodes, m: usize, ef_construction: usize, seed: u64) -> Result<HnswIndex> {
        if codes.n() == 0 {
            return Err(IkeError::param("cannot build an HNSW index over zero points"));
        }
        if m < 2 || ef_construction == 0 {
            return Err(IkeError::param("HNSW needs M >= 2 and efConstruction >= 1"));
        }
        let n = codes.n();
        let dist = Dist { codes, mask: codes.mask() };
        let level_mult = 1.0 / (m as f64).ln();
        let mut rng = stream(seed, Domain::Hnsw, 0);
        let mut index = HnswIndex { m, ef_construction, entry: 0, max_level: 0, links: Vec::with_capacity(n) };
        let mut visited = Visited::new(n);

        for id in 0..n as u32 {
            let u: f64 = 1.0 - rng.random::<f64>();
            let level = (-u.ln() * level_mult).floor() as usize;
            index.links.push(vec![Vec::new(); level + 1]);
            if id == 0 {
                index.max_level = level;
                continue;
            }
            let q = codes.code(id as usize);
            let mut ep = (dist.to_code(index.entry, q), index.entry);
            for l in (level + 1..=index.max_level).rev() {
                ep = index.greedy(&dist, q, ep, l);
            }
            let mut eps = vec![ep];
            for l in (0..=level.min(index.max_level)).rev() {
                let found = index.search_layer(&dist, q, &eps, ef_construction, l, &mut visited);
                let chosen = select_neighbors(&dist, &found, m);
                for &(_, nb) in &chosen {
                    index.connect(&dist, nb, id, l);
                }
                index.links[id as usize][l] = chosen.iter().map(|c| c.1).collect();
                eps = found;
            }
            if level > index.max_level {
                index.max_level = level;
                index.entry = id;
            }
        }
        Ok(index)
    }

    fn cap(&self, level: usize) -> usize {
        if level == 0 {
            2 * self.m
        } else {
            self.m
        }
    }

    fn connect(&mut self, dist: &Dist, node: u32, new: u32, level: usize) {
        let cap = self.cap(level);
        let list = &mut self.links[node as usize][level];
        list.push(new);
        if list.len() > cap {
            let mut cands: Vec<Cand> = list.iter().map(|&o| (dist.between(node, o), o)).collect();
            cands.sort_unstable();
            *list = select_neighbors(dist, &cands, cap).into_iter().map(|c| c.1).collect();
        }
    }

    fn greedy(&self, dist: &Dist, q: &[u64], mut cur: Cand, level: usize) -> Cand {
        loop {
            let mut moved = false;
            for &nb in &self.links[cur.1 as usize][level] {
                let c = (dist.to_code(nb, q), nb);
                if c < cur {
                    cur = c;
                    moved = true;
                }
            }
            if !moved {
                return cur;
            }
        }
    }

    /// Best-first expansion; returns up to `ef` candidates sorted ascending.
    fn search_layer(&self, dist: &Dist, q: &[u64], eps: &[Cand], ef: usize, level: usize, visited: &mut Visited) -> Vec<Cand> {
        visited.clear();
        let mut frontier: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        let mut best: BinaryHeap<Cand> = BinaryHeap::new();
        for &c in eps {
            if visited.insert(c.1) {
                frontier.push(Reverse(c));
                best.push(c);
            }
        }
        while best.len() > ef {
            best.pop();
        }
        while let Some(Reverse(cur)) = frontier.pop() {
            if best.len() >= ef && cur > *best.peek().unwrap() {
                break;
            }
            for &nb in &self.links[cur.1 as usize][level] {
                if !visited.insert(nb) {
                    continue;
                }
                let c = (dist.to_code(nb, q), nb);
                if best.len() < ef || c < *best.peek().unwrap() {
                    frontier.push(Reverse(c));
                    best.push(c);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    /// Top-`k` neighbors of `query` with a layer-0 candidate pool of `ef_search`.
    pub fn search(&self, codes: &PackedCodes, query: &[u64], k: usize, ef_search: usize) -> Result<SearchResult> {
        if codes.n() != self.links.len() {
            return Err(IkeError::param(format!(
                "index covers {} points but {} codes were supplied",
                self.links.len(),
                codes.n()
            )));
        }
        if query.len() != codes.words_per_point() {
            return Err(IkeError::Encoding("query code layout does not match the database".into()));
        }
        if ef_search < k {
            return Err(IkeError::param(format!("efSearch={ef_search} must be at least k={k}")));
        }
        let k = clamp_k(k, codes.n())?;
        let dist = Dist { codes, mask: codes.mask() };
        let mut ep = (dist.to_code(self.entry, query), self.entry);
        for l in (1..=self.max_level).rev() {
            ep = self.greedy(&dist, query, ep, l);
        }
        let mut visited = Visited::new(codes.n());
        let found = self.search_layer(&dist, query, &[ep], ef_search.max(k), 0, &mut visited);
        let t = codes.t() as u32;
        Ok(found.into_iter().take(k).map(|(d, id)| Neighbor { id, matches: t - d }).collect())
    }

    pub fn n(&self) -> usize {
        self.links.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn ef_construction(&self) -> usize {
        self.ef_construction
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn neighbors(&self, node: usize, level: usize) -> &[u32] {
        self.links[node].get(level).map_or(&[], Vec::as_slice)
    }

    /// `"IKEH" | M | efConstruction | n | max_level | entry`, then per node
    /// its top level and, per level, a count followed by neighbor ids. All u32.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(HNSW_MAGIC);
        for v in [self.m, self.ef_construction, self.links.len(), self.max_level, self.entry as usize] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for node in &self.links {
            buf.extend_from_slice(&((node.len() - 1) as u32).to_le_bytes());
            for list in node {
                buf.extend_from_slice(&(list.len() as u32).to_le_bytes());
                list.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
            }
            if buf.len() > 1 << 20 {
                w.write_all(&buf)?;
                buf.clear();
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<HnswIndex> {
        let mut next = || -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|e| truncated(e, "HNSW index"))?;
            Ok(u32::from_le_bytes(b))
        };
        if next()?.to_le_bytes() != *HNSW_MAGIC {
            return Err(IkeError::format("not an HNSW index file (bad magic)"));
        }
        let (m, efc, n, max_level, entry) =
            (next()? as usize, next()? as usize, next()? as usize, next()? as usize, next()?);
        if n == 0 || entry as usize >= n || m < 2 {
            return Err(IkeError::format("HNSW header is inconsistent"));
        }
        let mut links = Vec::with_capacity(n);
        for _ in 0..n {
            let top = next()? as usize;
            if top > max_level {
                return Err(IkeError::format("node level exceeds max_level"));
            }
            let mut node = Vec::with_capacity(top + 1);
            for l in 0..=top {
                let count = next()? as usize;
                if count > if l == 0 { 2 * m } else { m } {
                    return Err(IkeError::format("neighbor list exceeds its capacity"));
                }
                let list = (0..count).map(|_| next()).collect::<Result<Vec<_>>>()?;
                if list.iter().any(|&x| x as usize >= n) {
                    return Err(IkeError::format("neighbor id out of range"));
                }
                node.push(list);
            }
            links.push(node);
        }
        if links[entry as usize].len() != max_level + 1 {
            return Err(IkeError::format("entry point is not on the top level"));
        }
        Ok(HnswIndex { m, ef_construction: efc, entry, max_level, links })
    }
}

/// Diversity heuristic: walk candidates nearest first and keep one only if
/// it is closer to the base point than to every neighbor already kept.
fn select_neighbors(dist: &Dist, sorted: &[Cand], m: usize) -> Vec<Cand> {
    let mut kept: Vec<Cand> = Vec::with_capacity(m);
    for &c in sorted {
        if kept.len() >= m {
            break;
        }
        if kept.iter().all(|k| dist.between(c.1, k.1) >= c.0) {
            kept.push(c);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::exhaustive_topk;
    use crate::index::tests::random_codes;

    #[test]
    fn single_node() {
        let codes = random_codes(1, 64, 1, 0);
        let idx = HnswIndex::build(&codes, 32, 500, 0).unwrap();
        let q = random_codes(1, 64, 1, 9);
        let res = idx.search(&codes, q.code(0), 1, 10).unwrap();
        assert_eq!(res.len(), 1);
        assert_eq!(res[0].id, 0);
    }

    #[test]
    fn finds_itself_and_respects_caps() {
        let codes = random_codes(600, 128, 1, 1);
        let idx = HnswIndex::build(&codes, 8, 64, 3).unwrap();
        for i in (0..600).step_by(13) {
            let res = idx.search(&codes, codes.code(i), 5, 32).unwrap();
            assert_eq!(res[0], Neighbor { id: i as u32, matches: 128 });
        }
        for node in 0..600 {
            assert!(idx.neighbors(node, 0).len() <= 16);
            for l in 1..=idx.max_level() {
                assert!(idx.neighbors(node, l).len() <= 8);
            }
        }
    }

    #[test]
    fn full_ef_approaches_exhaustive() {
        let codes = random_codes(800, 256, 2, 4);
        let queries = random_codes(50, 256, 2, 5);
        let idx = HnswIndex::build(&codes, 16, 200, 1).unwrap();
        let mut hit = 0;
        for q in 0..50 {
            let truth: Vec<u32> = exhaustive_topk(&codes, queries.code(q), 10).unwrap().iter().map(|n| n.id).collect();
            let got = idx.search(&codes, queries.code(q), 10, 800).unwrap();
            hit += got.iter().filter(|n| truth.contains(&n.id)).count();
        }
        assert!(hit as f64 / 500.0 >= 0.99, "recall {}", hit as f64 / 500.0);
    }

    #[test]
    fn errors_and_round_trip() {
        let codes = random_codes(100, 64, 1, 2);
        let idx = HnswIndex::build(&codes, 4, 20, 8).unwrap();
        assert!(idx.search(&codes, codes.code(0), 10, 5).is_err());
        assert!(HnswIndex::build(&PackedCodes::empty(64, 1).unwrap(), 4, 20, 0).is_err());
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"IKEH");
        assert_eq!(HnswIndex::read_from(&buf[..]).unwrap(), idx);
        assert!(HnswIndex::read_from(&buf[..buf.len() - 2]).is_err());
        assert_eq!(idx, HnswIndex::build(&codes, 4, 20, 8).unwrap());
    }
}
