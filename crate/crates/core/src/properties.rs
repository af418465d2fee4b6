//! Statistical checks of the partitioners' theoretical properties:
//! entropy of the cell distribution, independence of code bits, and the
//! correlation between partitions that bounds the ensemble's variance.
//!
//! Everything here is seeded; reports carry the raw numbers so a failing
//! threshold can be diagnosed.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{IkeError, Result};
use crate::iforest::ITree;
use crate::model::{IkeModel, ModelKind};
use crate::partition::Partition;
use crate::rng::{stream, Domain, RngStream};
use crate::types::{ceil_log2, subsample, EmbeddingMatrix, IkeParams};
use crate::voronoi::VoronoiPartition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    IForest,
    /// Voronoi cells on `m` random dimensions; `m = d` is full-dimensional.
    Voronoi { m: usize },
}

impl Method {
    /// One partition built on the given sample rows; the rest of its
    /// randomness comes from `rng`.
    pub fn build_on_sample(&self, data: &EmbeddingMatrix, ids: &[usize], rng: &mut RngStream) -> Result<Box<dyn Partition>> {
        Ok(match *self {
            Method::IForest => Box::new(ITree::build(&data.select(ids), ceil_log2(ids.len()), rng)),
            Method::Voronoi { m } => {
                let dims = VoronoiPartition::draw_dims(data.d(), m, rng)?;
                Box::new(VoronoiPartition::from_anchor_ids(data, ids, dims))
            }
        })
    }

    pub fn build(&self, data: &EmbeddingMatrix, psi: usize, rng: &mut RngStream) -> Result<Box<dyn Partition>> {
        let ids = subsample(data.n(), psi, rng)?;
        self.build_on_sample(data, &ids, rng)
    }

    fn model(&self, data: &EmbeddingMatrix, psi: usize, t: usize, seed: u64) -> Result<IkeModel> {
        let params = IkeParams::new(t, psi, seed)?;
        match *self {
            Method::IForest => IkeModel::build(ModelKind::IForest, data, &params),
            Method::Voronoi { m } => IkeModel::build(ModelKind::Voronoi, data, &params.with_subspace(m)),
        }
    }
}

fn entropy_bits(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyReport {
    pub method: Method,
    pub psi: usize,
    pub trees: usize,
    pub points: usize,
    /// `log2(psi)`.
    pub max_entropy: f64,
    /// Mean over partitions of the entropy of that partition's cell distribution.
    pub mean_entropy: f64,
    pub min_entropy: f64,
    /// Entropy of the cell-index distribution pooled over all partitions,
    /// i.e. the cell probability in expectation over partition randomness.
    pub pooled_entropy: f64,
    pub mean_cells: f64,
}

/// Cell-distribution entropy of `trees` partitions, each built from its own
/// `psi`-sample of `data`, measured on `points`.
pub fn check_entropy(
    method: Method,
    data: &EmbeddingMatrix,
    points: &EmbeddingMatrix,
    psi: usize,
    trees: usize,
    seed: u64,
) -> Result<EntropyReport> {
    if trees == 0 || psi < 2 {
        return Err(IkeError::param("need at least one partition and psi >= 2"));
    }
    let per_tree: Vec<(Vec<u64>, usize)> = (0..trees)
        .into_par_iter()
        .map(|i| {
            let part = method.build(data, psi, &mut stream(seed, Domain::Partition, i as u64))?;
            let mut counts = vec![0u64; psi];
            for x in points.rows() {
                counts[part.cell(x) as usize] += 1;
            }
            Ok((counts, part.num_cells()))
        })
        .collect::<Result<_>>()?;
    let entropies: Vec<f64> = per_tree.iter().map(|(c, _)| entropy_bits(c)).collect();
    let mut pooled = vec![0u64; psi];
    for (c, _) in &per_tree {
        pooled.iter_mut().zip(c).for_each(|(p, v)| *p += v);
    }
    Ok(EntropyReport {
        method,
        psi,
        trees,
        points: points.n(),
        max_entropy: (psi as f64).log2(),
        mean_entropy: entropies.iter().sum::<f64>() / trees as f64,
        min_entropy: entropies.iter().copied().fold(f64::INFINITY, f64::min),
        pooled_entropy: entropy_bits(&pooled),
        mean_cells: per_tree.iter().map(|(_, k)| *k as f64).sum::<f64>() / trees as f64,
    })
}

/// Streaming Pearson correlation over 0/1 pairs.
#[derive(Debug, Default, Clone, Copy)]
struct BitPairs {
    n: u64,
    a: u64,
    b: u64,
    ab: u64,
}

impl BitPairs {
    fn push(&mut self, a: bool, b: bool) {
        self.n += 1;
        self.a += a as u64;
        self.b += b as u64;
        self.ab += (a && b) as u64;
    }

    fn merge(mut self, o: BitPairs) -> BitPairs {
        self.n += o.n;
        self.a += o.a;
        self.b += o.b;
        self.ab += o.ab;
        self
    }

    fn corr(&self) -> Option<f64> {
        let n = self.n as f64;
        let (pa, pb) = (self.a as f64 / n, self.b as f64 / n);
        let cov = self.ab as f64 / n - pa * pb;
        let var = pa * (1.0 - pa) * pb * (1.0 - pb);
        (var > 0.0).then(|| cov / var.sqrt())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BitReport {
    pub method: Method,
    pub psi: usize,
    pub trees: usize,
    pub points: usize,
    /// Mean over partitions of |corr| between the two bits of the 2-bit code.
    pub within_mean_abs_corr: Option<f64>,
    /// Partitions where a bit was constant on the evaluation points.
    pub within_skipped: usize,
    /// Correlation of the two bits over all (partition, point) samples.
    pub within_pooled_corr: Option<f64>,
    /// Correlation between the low bits of consecutive partitions over all
    /// (partition pair, point) samples.
    pub between_pooled_corr: Option<f64>,
    /// Mean over consecutive partition pairs of |corr| of their low bits.
    pub between_mean_abs_corr: Option<f64>,
    pub note: Option<String>,
}

/// Correlation between the two bits of each 2-bit cell code (psi = 4), and
/// between bits of different partitions.
pub fn check_bit_independence(
    method: Method,
    data: &EmbeddingMatrix,
    points: &EmbeddingMatrix,
    trees: usize,
    seed: u64,
) -> Result<BitReport> {
    const PSI: usize = 4;
    if trees < 2 {
        return Err(IkeError::param("need at least two partitions"));
    }
    let mut report = BitReport {
        method,
        psi: PSI,
        trees,
        points: points.n(),
        within_mean_abs_corr: None,
        within_skipped: trees,
        within_pooled_corr: None,
        between_pooled_corr: None,
        between_mean_abs_corr: None,
        note: None,
    };
    let first = points.row(0);
    if data.rows().all(|r| r == first) && points.rows().all(|r| r == first) {
        report.note = Some("all points are identical: every code bit is constant, so correlation is undefined".into());
        return Ok(report);
    }
    let cells: Vec<Vec<u32>> = (0..trees)
        .into_par_iter()
        .map(|i| {
            let part = method.build(data, PSI, &mut stream(seed, Domain::Partition, i as u64))?;
            Ok(points.rows().map(|x| part.cell(x)).collect())
        })
        .collect::<Result<_>>()?;
    let within: Vec<BitPairs> = cells
        .par_iter()
        .map(|c| c.iter().fold(BitPairs::default(), |mut acc, v| {
            acc.push(v & 1 == 1, v & 2 == 2);
            acc
        }))
        .collect();
    let between: Vec<BitPairs> = cells
        .par_windows(2)
        .map(|w| w[0].iter().zip(&w[1]).fold(BitPairs::default(), |mut acc, (u, v)| {
            acc.push(u & 1 == 1, v & 1 == 1);
            acc
        }))
        .collect();
    let mean_abs = |v: &[BitPairs]| {
        let ok: Vec<f64> = v.iter().filter_map(|p| p.corr()).map(f64::abs).collect();
        ((!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64), v.len() - ok.len())
    };
    let pooled = |v: &[BitPairs]| v.iter().fold(BitPairs::default(), |a, &b| a.merge(b)).corr();
    (report.within_mean_abs_corr, report.within_skipped) = mean_abs(&within);
    report.within_pooled_corr = pooled(&within);
    report.between_mean_abs_corr = mean_abs(&between).0;
    report.between_pooled_corr = pooled(&between);
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct DiversityConfig {
    pub method: Method,
    pub psi: usize,
    pub t: usize,
    pub groups: usize,
    pub d: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiversityEstimate {
    pub rho: f64,
    pub stderr: f64,
    pub pairs_used: usize,
    pub degenerate_pairs: usize,
    pub config: DiversityConfig,
}

/// Per-pair correlation from same-cell counts.
///
/// `counts[g]` is the number of the `t` partitions in group `g` that put the
/// pair in the same cell. Partitions within a group share their data sample;
/// groups are independent. Returns `None` when the pair is degenerate (always
/// or never together).
pub fn pair_rho(counts: &[u32], t: usize) -> Option<f64> {
    let g = counts.len() as f64;
    let t = t as f64;
    let means: Vec<f64> = counts.iter().map(|&c| c as f64 / t).collect();
    let p = means.iter().sum::<f64>() / g;
    if p <= 0.0 || p >= 1.0 {
        return None;
    }
    // E[Z_i Z_j], i != j in the same group: unbiased from the count.
    let within = counts.iter().map(|&c| (c as f64) * (c as f64 - 1.0) / (t * (t - 1.0))).sum::<f64>() / g;
    // E[Z_i] E[Z_j] from products of different groups.
    let s = means.iter().sum::<f64>();
    let s2 = means.iter().map(|m| m * m).sum::<f64>();
    let across = (s * s - s2) / (g * (g - 1.0));
    // sigma^2 = p - p^2, with p^2 estimated the same way as the covariance's
    // product term so identical partitions give exactly 1.
    let var = p - across;
    (var > 0.0).then(|| ((within - across) / var).clamp(-1.0, 1.0))
}

/// Combine per-pair counts into an estimate: mean of per-pair rho, standard
/// error over pairs.
pub fn rho_from_counts(per_pair: &[Vec<u32>], t: usize) -> Result<(f64, f64, usize, usize)> {
    if t < 2 {
        return Err(IkeError::param("rho needs t >= 2 partitions per group"));
    }
    if per_pair.iter().any(|c| c.len() < 2) {
        return Err(IkeError::param("rho needs at least two groups"));
    }
    let rhos: Vec<f64> = per_pair.iter().filter_map(|c| pair_rho(c, t)).collect();
    let degenerate = per_pair.len() - rhos.len();
    if rhos.len() < 2 {
        return Err(IkeError::param("fewer than two non-degenerate pairs"));
    }
    let n = rhos.len() as f64;
    let mean = rhos.iter().sum::<f64>() / n;
    let sd = (rhos.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok((mean, sd / n.sqrt(), rhos.len(), degenerate))
}

/// `count` seeded pairs of distinct row ids below `n`.
pub fn random_pairs(n: usize, count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(IkeError::param("need at least two points to form pairs"));
    }
    let mut rng = stream(seed, Domain::Experiment, u64::MAX);
    let mut pairs = Vec::with_capacity(count);
    while pairs.len() < count {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            pairs.push((a, b));
        }
    }
    Ok(pairs)
}

/// Correlation between same-cell indicators of partitions that share their
/// data sample but draw the rest of their randomness independently.
///
/// `groups` independent samples are drawn; each builds `t` partitions.
pub fn estimate_rho(
    method: Method,
    data: &EmbeddingMatrix,
    pairs: &[(usize, usize)],
    psi: usize,
    t: usize,
    groups: usize,
    seed: u64,
) -> Result<DiversityEstimate> {
    if pairs.len() < 30 {
        return Err(IkeError::param(format!("need at least 30 pairs, got {}", pairs.len())));
    }
    if pairs.iter().any(|&(a, b)| a >= data.n() || b >= data.n()) {
        return Err(IkeError::param("pair refers to a row outside the data"));
    }
    if t < 2 || groups < 2 {
        return Err(IkeError::param("need t >= 2 partitions and at least two groups"));
    }
    // counts[g][pair]
    let counts: Vec<Vec<u32>> = (0..groups)
        .into_par_iter()
        .map(|g| {
            let ids = subsample(data.n(), psi, &mut stream(seed, Domain::Experiment, g as u64))?;
            let mut c = vec![0u32; pairs.len()];
            for j in 0..t {
                let mut rng = stream(seed, Domain::Partition, (g * t + j) as u64);
                let part = method.build_on_sample(data, &ids, &mut rng)?;
                for (slot, &(a, b)) in c.iter_mut().zip(pairs) {
                    *slot += (part.cell(data.row(a)) == part.cell(data.row(b))) as u32;
                }
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let per_pair: Vec<Vec<u32>> = (0..pairs.len()).map(|p| counts.iter().map(|c| c[p]).collect()).collect();
    let (rho, stderr, pairs_used, degenerate_pairs) = rho_from_counts(&per_pair, t)?;
    if degenerate_pairs > 0 {
        log::info!("{degenerate_pairs} degenerate pairs excluded from the rho estimate");
    }
    Ok(DiversityEstimate {
        rho,
        stderr,
        pairs_used,
        degenerate_pairs,
        config: DiversityConfig { method, psi, t, groups, d: data.d(), pairs: pairs.len() },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelSpread {
    pub method: Method,
    pub t: usize,
    pub models: usize,
    pub mean: f64,
    pub variance: f64,
}

/// Mean and variance of the kernel estimate between rows `x` and `y` across
/// `models` independently seeded models of `t` partitions.
#[allow(clippy::too_many_arguments)]
pub fn kernel_spread(
    method: Method,
    data: &EmbeddingMatrix,
    x: usize,
    y: usize,
    psi: usize,
    t: usize,
    models: usize,
    seed: u64,
) -> Result<KernelSpread> {
    if models < 2 {
        return Err(IkeError::param("need at least two models"));
    }
    let both = data.select(&[x, y]);
    let ks: Vec<f64> = (0..models)
        .into_par_iter()
        .map(|i| {
            let model = method.model(data, psi, t, crate::rng::splitmix64(seed.wrapping_add(i as u64)))?;
            let codes = model.encode_matrix(&both)?;
            crate::codec::kernel_estimate(codes.code(0), codes.code(1), t, codes.n_b())
        })
        .collect::<Result<_>>()?;
    let mean = ks.iter().sum::<f64>() / models as f64;
    let variance = ks.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / (models as f64 - 1.0);
    Ok(KernelSpread { method, t, models, mean, variance })
}
