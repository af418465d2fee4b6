//! Shared domain types: the float corpus, encoding parameters and the
//! per-point partition index vector.

use rand::seq::index;

use crate::error::{IkeError, Result};
use crate::rng::RngStream;

/// Supported bits per code element. Codes stay byte aligned.
pub const SUPPORTED_NB: [u8; 4] = [1, 2, 4, 8];

/// Row-major `n x d` matrix of finite `f32` values. Row `i` is point id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(IkeError::param(format!("embedding matrix must be non-empty, got {n}x{d}")));
        }
        if data.len() != n * d {
            return Err(IkeError::param(format!(
                "embedding matrix {n}x{d} needs {} values, got {}",
                n * d,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(IkeError::param(format!(
                "non-finite value at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(IkeError::param(format!("row {bad} has {} dims, expected {d}", rows[bad].len())));
        }
        Self::new(rows.len(), d, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Copy of the rows listed in `ids`, in that order.
    pub fn select(&self, ids: &[usize]) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(ids.len() * self.d);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        EmbeddingMatrix { n: ids.len(), d: self.d, data }
    }

    /// Scale every row to unit l2 norm. All-zero rows are left untouched.
    pub fn l2_normalize(&mut self) {
        for row in self.data.chunks_exact_mut(self.d) {
            let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
}

/// Smallest supported code width that can hold `psi` distinct indices.
pub fn derive_nb(psi: usize) -> Result<u8> {
    if !(2..=256).contains(&psi) {
        return Err(IkeError::param(format!("psi must be in [2, 256], got {psi}")));
    }
    Ok(SUPPORTED_NB
        .into_iter()
        .find(|&b| (1usize << b) >= psi)
        .expect("psi <= 256 always fits in 8 bits"))
}

/// Encoding parameters shared by every partitioner kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IkeParams {
    /// Number of partitions (trees or diagrams).
    pub t: usize,
    /// Sample size per partition; also the maximum number of cells.
    pub psi: usize,
    pub n_b: u8,
    /// Subspace dimensionality, Voronoi variant only.
    pub m: Option<usize>,
    pub seed: u64,
}

impl IkeParams {
    pub fn new(t: usize, psi: usize, seed: u64) -> Result<Self> {
        if t == 0 {
            return Err(IkeError::param("t must be at least 1"));
        }
        let n_b = derive_nb(psi)?;
        Ok(Self { t, psi, n_b, m: None, seed })
    }

    pub fn with_subspace(mut self, m: usize) -> Self {
        self.m = Some(m);
        self
    }

    /// iTree height limit, `ceil(log2(psi))`.
    pub fn height_limit(&self) -> usize {
        ceil_log2(self.psi)
    }

    pub fn words_per_point(&self) -> usize {
        (self.t * self.n_b as usize).div_ceil(64)
    }

    pub fn bytes_per_point(&self) -> usize {
        self.words_per_point() * 8
    }
}

pub(crate) fn ceil_log2(x: usize) -> usize {
    if x <= 1 {
        0
    } else {
        (usize::BITS - (x - 1).leading_zeros()) as usize
    }
}

/// One 0-based cell index per partition.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PartitionIndexVector(pub Vec<u32>);

impl PartitionIndexVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

/// Draw `psi` distinct row ids uniformly without replacement.
pub fn subsample(n: usize, psi: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    if psi > n {
        return Err(IkeError::param(format!("sample size psi={psi} exceeds corpus size n={n}")));
    }
    Ok(index::sample(rng, n, psi).into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{partition_stream, stream, Domain};
    use proptest::prelude::*;

    #[test]
    fn nb_examples() {
        assert_eq!(derive_nb(2).unwrap(), 1);
        assert_eq!(derive_nb(3).unwrap(), 2);
        assert_eq!(derive_nb(4).unwrap(), 2);
        assert_eq!(derive_nb(12).unwrap(), 4);
        assert_eq!(derive_nb(16).unwrap(), 4);
        assert_eq!(derive_nb(17).unwrap(), 8);
        assert_eq!(derive_nb(256).unwrap(), 8);
        assert!(matches!(derive_nb(1), Err(IkeError::Param(_))));
        assert!(matches!(derive_nb(257), Err(IkeError::Param(_))));
    }

    #[test]
    fn nb_matches_enumeration() {
        for psi in 2..=256usize {
            let bits = (0..).find(|b| (1usize << b) >= psi).unwrap();
            let oracle = *[1u8, 2, 4, 8].iter().find(|&&b| b as usize >= bits).unwrap();
            assert_eq!(derive_nb(psi).unwrap(), oracle, "psi={psi}");
        }
    }

    proptest! {
        #[test]
        fn nb_monotone(a in 2usize..=256, b in 2usize..=256) {
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(derive_nb(lo).unwrap() <= derive_nb(hi).unwrap());
            let nb = derive_nb(a).unwrap();
            // Re-deriving from the full capacity of the width is a fixed point.
            prop_assert_eq!(derive_nb(1usize << nb).unwrap(), nb);
        }
    }

    #[test]
    fn ceil_log2_values() {
        let got: Vec<usize> = [1, 2, 3, 4, 5, 8, 12, 16, 17].iter().map(|&x| ceil_log2(x)).collect();
        assert_eq!(got, vec![0, 1, 2, 2, 3, 3, 4, 4, 5]);
    }

    #[test]
    fn matrix_rejects_bad_input() {
        assert!(EmbeddingMatrix::new(0, 3, vec![]).is_err());
        assert!(EmbeddingMatrix::new(1, 3, vec![1.0, 2.0]).is_err());
        assert!(EmbeddingMatrix::new(1, 2, vec![1.0, f32::NAN]).is_err());
        assert!(EmbeddingMatrix::new(1, 2, vec![f32::INFINITY, 0.0]).is_err());
        let m = EmbeddingMatrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(m.row(1), &[0.0, 0.0]);
        let mut m2 = m.clone();
        m2.l2_normalize();
        assert_eq!(m2.row(0), &[0.6, 0.8]);
        assert_eq!(m2.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn subsample_full_corpus_is_permutation() {
        let mut ids = subsample(10, 10, &mut partition_stream(1, 0)).unwrap();
        ids.sort_unstable();
        assert_eq!(ids, (0..10).collect::<Vec<_>>());
        assert!(matches!(subsample(3, 4, &mut partition_stream(1, 0)), Err(IkeError::Param(_))));
    }

    #[test]
    fn subsample_deterministic_and_distinct() {
        let a = subsample(1_000_000, 16, &mut partition_stream(99, 5)).unwrap();
        let b = subsample(1_000_000, 16, &mut partition_stream(99, 5)).unwrap();
        assert_eq!(a, b);
        let mut s = a.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 16);
    }

    #[test]
    fn subsample_uniform_frequency() {
        // Binomial oracle: each id is selected with probability psi/n per draw.
        let (n, psi, draws) = (50usize, 2usize, 100_000usize);
        let mut counts = vec![0u32; n];
        let mut rng = stream(3, Domain::Experiment, 0);
        for _ in 0..draws {
            for i in subsample(n, psi, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let p = psi as f64 / n as f64;
        let mean = draws as f64 * p;
        let se = (draws as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!((c as f64 - mean).abs() < 3.0 * se, "id {i}: {c} vs {mean}±{se}");
        }
    }

    #[test]
    fn subsample_streams_cover_corpus() {
        let n = 20;
        let mut seen = vec![false; n];
        for i in 0..200 {
            for id in subsample(n, 2, &mut partition_stream(11, i)).unwrap() {
                seen[id] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}
