//! Voronoi-diagram partitioner on random subspaces.
//!
//! Each partition picks `m` distinct dimensions and `psi` anchor points; a
//! point's cell is its nearest anchor in that subspace. With `m = d` this is
//! the full-dimensional Voronoi hashing scheme.

use rand::seq::index;
use rayon::prelude::*;

use crate::error::{IkeError, Result};
use crate::partition::Partition;
use crate::rng::{partition_stream, RngStream};
use crate::types::{subsample, EmbeddingMatrix, IkeParams, PartitionIndexVector};

#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiPartition {
    /// Ascending, distinct dimension ids.
    dims: Vec<u32>,
    /// `psi x m` anchors restricted to `dims`, row-major.
    anchors: Vec<f32>,
}

impl VoronoiPartition {
    /// Draw `m` dimensions, then `psi` anchors, both from `rng`.
    pub fn build(data: &EmbeddingMatrix, psi: usize, m: usize, rng: &mut RngStream) -> Result<Self> {
        let dims = Self::draw_dims(data.d(), m, rng)?;
        let ids = subsample(data.n(), psi, rng)?;
        Ok(Self::from_anchor_ids(data, &ids, dims))
    }

    pub(crate) fn draw_dims(d: usize, m: usize, rng: &mut RngStream) -> Result<Vec<u32>> {
        if m == 0 || m > d {
            return Err(IkeError::param(format!("subspace size m={m} must be in [1, {d}]")));
        }
        let mut dims: Vec<u32> = index::sample(rng, d, m).into_iter().map(|i| i as u32).collect();
        dims.sort_unstable();
        Ok(dims)
    }

    pub(crate) fn from_anchor_ids(data: &EmbeddingMatrix, ids: &[usize], dims: Vec<u32>) -> Self {
        let mut anchors = Vec::with_capacity(ids.len() * dims.len());
        for &id in ids {
            let row = data.row(id);
            anchors.extend(dims.iter().map(|&q| row[q as usize]));
        }
        VoronoiPartition { dims, anchors }
    }

    pub fn from_parts(dims: Vec<u32>, anchors: Vec<f32>, d: usize) -> Result<Self> {
        if dims.is_empty() || anchors.is_empty() || !anchors.len().is_multiple_of(dims.len()) {
            return Err(IkeError::format("Voronoi partition has inconsistent anchor storage"));
        }
        if dims.iter().any(|&q| q as usize >= d) || dims.windows(2).any(|w| w[0] >= w[1]) {
            return Err(IkeError::format("Voronoi partition dims must be ascending and < d"));
        }
        Ok(VoronoiPartition { dims, anchors })
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn anchors(&self) -> &[f32] {
        &self.anchors
    }

    pub fn m(&self) -> usize {
        self.dims.len()
    }

    /// Nearest anchor; equidistant anchors resolve to the lowest index.
    #[inline]
    pub fn nearest(&self, x: &[f32]) -> u32 {
        let m = self.dims.len();
        let mut best = (f64::INFINITY, 0u32);
        for (j, anchor) in self.anchors.chunks_exact(m).enumerate() {
            let dist: f64 = self
                .dims
                .iter()
                .zip(anchor)
                .map(|(&q, &a)| {
                    let diff = x[q as usize] - a;
                    (diff * diff) as f64
                })
                .sum();
            if dist < best.0 {
                best = (dist, j as u32);
            }
        }
        best.1
    }
}

impl Partition for VoronoiPartition {
    fn cell(&self, x: &[f32]) -> u32 {
        self.nearest(x)
    }

    fn num_cells(&self) -> usize {
        self.anchors.len() / self.dims.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VdModel {
    partitions: Vec<VoronoiPartition>,
    params: IkeParams,
    d: usize,
}

impl VdModel {
    pub fn build(data: &EmbeddingMatrix, params: &IkeParams) -> Result<VdModel> {
        let m = params.m.ok_or_else(|| IkeError::param("Voronoi model needs a subspace size m"))?;
        if m == 0 || m > data.d() {
            return Err(IkeError::param(format!("subspace size m={m} must be in [1, {}]", data.d())));
        }
        if params.psi > data.n() {
            return Err(IkeError::param(format!(
                "sample size psi={} exceeds corpus size n={}",
                params.psi,
                data.n()
            )));
        }
        let partitions = (0..params.t)
            .into_par_iter()
            .map(|i| VoronoiPartition::build(data, params.psi, m, &mut partition_stream(params.seed, i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(VdModel { partitions, params: *params, d: data.d() })
    }

    pub fn from_parts(partitions: Vec<VoronoiPartition>, params: IkeParams, d: usize) -> Result<VdModel> {
        let m = params.m.unwrap_or(0);
        if partitions.len() != params.t
            || partitions.iter().any(|p| p.m() != m || p.num_cells() != params.psi)
        {
            return Err(IkeError::format("Voronoi partitions disagree with model header"));
        }
        Ok(VdModel { partitions, params, d })
    }

    pub fn partitions(&self) -> &[VoronoiPartition] {
        &self.partitions
    }

    pub fn params(&self) -> &IkeParams {
        &self.params
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn map_point(&self, x: &[f32]) -> Result<PartitionIndexVector> {
        if x.len() != self.d {
            return Err(IkeError::param(format!("point has {} dims, model expects {}", x.len(), self.d)));
        }
        Ok(PartitionIndexVector(self.partitions.iter().map(|p| p.nearest(x)).collect()))
    }

    pub fn map_into(&self, x: &[f32], out: &mut [u32]) {
        for (o, p) in out.iter_mut().zip(&self.partitions) {
            *o = p.nearest(x);
        }
    }
}
