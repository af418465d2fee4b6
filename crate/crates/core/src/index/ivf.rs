//! Inverted-file index: k-means centroids in float space select the lists to
//! probe, candidates are then ranked by match count on their codes.
//!
//! Only centroids are kept in float form; corpus rows are not stored.

use std::io::{Read, Write};

use crate::codec::{match_count_raw, truncated, PackedCodes};
use crate::error::{IkeError, Result};
use crate::index::kmeans::{assign, kmeans, l2_sq};
use crate::index::{clamp_k, Neighbor, SearchResult, TopK};
use crate::types::EmbeddingMatrix;

pub const IVF_MAGIC: &[u8; 4] = b"IKEV";

#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    nlist: usize,
    d: usize,
    centroids: Vec<f32>,
    /// List `j` is `ids[offsets[j]..offsets[j + 1]]`, ids ascending.
    offsets: Vec<u32>,
    ids: Vec<u32>,
}

impl IvfIndex {
    pub fn build(data: &EmbeddingMatrix, codes: &PackedCodes, nlist: usize, iters: usize, seed: u64) -> Result<IvfIndex> {
        if data.n() != codes.n() {
            return Err(IkeError::param(format!(
                "{} float rows but {} codes; both must describe the same points",
                data.n(),
                codes.n()
            )));
        }
        let centroids = kmeans(data, nlist, iters, seed)?;
        let labels = assign(data, &centroids);
        Ok(Self::from_assignment(nlist, data.d(), centroids, &labels))
    }

    fn from_assignment(nlist: usize, d: usize, centroids: Vec<f32>, labels: &[u32]) -> IvfIndex {
        let mut offsets = vec![0u32; nlist + 1];
        for &l in labels {
            offsets[l as usize + 1] += 1;
        }
        for j in 0..nlist {
            offsets[j + 1] += offsets[j];
        }
        let mut fill = offsets.clone();
        let mut ids = vec![0u32; labels.len()];
        for (i, &l) in labels.iter().enumerate() {
            ids[fill[l as usize] as usize] = i as u32;
            fill[l as usize] += 1;
        }
        IvfIndex { nlist, d, centroids, offsets, ids }
    }

    pub fn nlist(&self) -> usize {
        self.nlist
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn list(&self, j: usize) -> &[u32] {
        &self.ids[self.offsets[j] as usize..self.offsets[j + 1] as usize]
    }

    /// The `nprobe` centroids nearest to `x`, nearest first, ties by index.
    pub fn probe_order(&self, x: &[f32], nprobe: usize) -> Vec<usize> {
        let mut order: Vec<(f64, usize)> =
            self.centroids.chunks_exact(self.d).enumerate().map(|(j, c)| (l2_sq(x, c), j)).collect();
        let nprobe = nprobe.min(self.nlist);
        order.select_nth_unstable_by(nprobe - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.truncate(nprobe);
        order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.into_iter().map(|(_, j)| j).collect()
    }

    pub fn search(
        &self,
        codes: &PackedCodes,
        query_float: &[f32],
        query_code: &[u64],
        k: usize,
        nprobe: usize,
    ) -> Result<SearchResult> {
        if query_float.len() != self.d {
            return Err(IkeError::param(format!(
                "query has {} dims, index centroids have {}",
                query_float.len(),
                self.d
            )));
        }
        if codes.n() != self.ids.len() {
            return Err(IkeError::param("codes do not match the indexed point count"));
        }
        if query_code.len() != codes.words_per_point() {
            return Err(IkeError::Encoding("query code layout does not match the database".into()));
        }
        if nprobe == 0 {
            return Err(IkeError::param("nprobe must be at least 1"));
        }
        if nprobe > self.nlist {
            log::warn!("nprobe={nprobe} exceeds nlist={}; probing every list", self.nlist);
        }
        let k = clamp_k(k, codes.n())?;
        let (t, n_b, mask) = (codes.t(), codes.n_b(), codes.mask());
        let mut top = TopK::new(k);
        for j in self.probe_order(query_float, nprobe) {
            for &id in self.list(j) {
                let m = match_count_raw(codes.code(id as usize), query_code, t, n_b, mask);
                top.push(Neighbor { id, matches: m });
            }
        }
        Ok(top.into_sorted())
    }

    /// `"IKEV" | nlist u32 | d u32 | centroids f32 | offsets u32 x (nlist+1) | ids u32`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::with_capacity(12 + 4 * (self.centroids.len() + self.offsets.len() + self.ids.len()));
        buf.extend_from_slice(IVF_MAGIC);
        buf.extend_from_slice(&(self.nlist as u32).to_le_bytes());
        buf.extend_from_slice(&(self.d as u32).to_le_bytes());
        self.centroids.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        self.offsets.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        self.ids.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<IvfIndex> {
        let mut words = |count: usize| -> Result<Vec<[u8; 4]>> {
            let mut raw = vec![0u8; count * 4];
            r.read_exact(&mut raw).map_err(|e| truncated(e, "IVF index"))?;
            Ok(raw.chunks_exact(4).map(|b| b.try_into().unwrap()).collect())
        };
        let head = words(3)?;
        if head[0] != *IVF_MAGIC {
            return Err(IkeError::format("not an IVF index file (bad magic)"));
        }
        let nlist = u32::from_le_bytes(head[1]) as usize;
        let d = u32::from_le_bytes(head[2]) as usize;
        if nlist == 0 || d == 0 {
            return Err(IkeError::format("IVF header has nlist=0 or d=0"));
        }
        let centroids: Vec<f32> = words(nlist * d)?.into_iter().map(f32::from_le_bytes).collect();
        let offsets: Vec<u32> = words(nlist + 1)?.into_iter().map(u32::from_le_bytes).collect();
        if offsets[0] != 0 || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(IkeError::format("IVF list offsets are not monotone"));
        }
        let n = offsets[nlist] as usize;
        let ids: Vec<u32> = words(n)?.into_iter().map(u32::from_le_bytes).collect();
        let mut seen = vec![false; n];
        for &id in &ids {
            if id as usize >= n || std::mem::replace(&mut seen[id as usize], true) {
                return Err(IkeError::format("IVF lists are not a partition of the point ids"));
            }
        }
        Ok(IvfIndex { nlist, d, centroids, offsets, ids })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::exhaustive_topk;
    use crate::index::kmeans::nearest_centroid;
    use crate::model::{IkeModel, ModelKind};
    use crate::rng::{stream, Domain};
    use crate::types::IkeParams;
    use rand::Rng;

    fn setup(n: usize) -> (EmbeddingMatrix, PackedCodes) {
        let mut rng = stream(6, Domain::Experiment, 3);
        let data = EmbeddingMatrix::new(n, 8, (0..n * 8).map(|_| rng.random::<f32>()).collect()).unwrap();
        let model = IkeModel::build(ModelKind::IForest, &data, &IkeParams::new(128, 4, 1).unwrap()).unwrap();
        let codes = model.encode_matrix(&data).unwrap();
        (data, codes)
    }

    #[test]
    fn lists_partition_points() {
        let (data, codes) = setup(1000);
        let idx = IvfIndex::build(&data, &codes, 16, 25, 2).unwrap();
        let mut seen = vec![0; 1000];
        for j in 0..16 {
            for &id in idx.list(j) {
                seen[id as usize] += 1;
                assert_eq!(nearest_centroid(data.row(id as usize), idx.centroids(), 8), j);
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn full_probe_equals_exhaustive() {
        let (data, codes) = setup(600);
        let idx = IvfIndex::build(&data, &codes, 12, 25, 0).unwrap();
        for i in (0..600).step_by(37) {
            let got = idx.search(&codes, data.row(i), codes.code(i), 10, 12).unwrap();
            assert_eq!(got, exhaustive_topk(&codes, codes.code(i), 10).unwrap());
            // Oversized nprobe clamps.
            assert_eq!(idx.search(&codes, data.row(i), codes.code(i), 10, 50).unwrap(), got);
        }
        let single = IvfIndex::build(&data, &codes, 1, 25, 0).unwrap();
        assert_eq!(
            single.search(&codes, data.row(3), codes.code(3), 10, 1).unwrap(),
            exhaustive_topk(&codes, codes.code(3), 10).unwrap()
        );
    }

    #[test]
    fn single_probe_stays_in_nearest_list() {
        let (data, codes) = setup(500);
        let idx = IvfIndex::build(&data, &codes, 10, 25, 0).unwrap();
        let q = data.row(42);
        let j = nearest_centroid(q, idx.centroids(), 8);
        for nb in idx.search(&codes, q, codes.code(42), 20, 1).unwrap() {
            assert!(idx.list(j).contains(&nb.id));
        }
    }

    #[test]
    fn errors_and_round_trip() {
        let (data, codes) = setup(100);
        assert!(IvfIndex::build(&data, &codes, 101, 25, 0).is_err());
        let idx = IvfIndex::build(&data, &codes, 4, 25, 0).unwrap();
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        assert_eq!(IvfIndex::read_from(&buf[..]).unwrap(), idx);
        buf[0] = b'x';
        assert!(IvfIndex::read_from(&buf[..]).is_err());
        assert!(idx.search(&codes, &[0.0; 3], codes.code(0), 5, 1).is_err());
    }
}
