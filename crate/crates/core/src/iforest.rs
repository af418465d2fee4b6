//! Isolation-forest partitioner.
//!
//! Each tree is built from its own subsample by random axis-aligned splits
//! and stored as a preorder node list: the left child of an internal node is
//! the next node, the right child is addressed explicitly. Leaves are
//! numbered 0.. in left-first depth-first order.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{IkeError, Result};
use crate::partition::Partition;
use crate::rng::{partition_stream, RngStream};
use crate::types::{subsample, EmbeddingMatrix, IkeParams, PartitionIndexVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ITreeNode {
    /// `x[split_dim] < split_value` goes to the next node in preorder,
    /// everything else to `right`.
    Internal { split_dim: u32, split_value: f32, right: u32 },
    Leaf { leaf_index: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ITree {
    nodes: Vec<ITreeNode>,
    num_leaves: u32,
}

impl ITree {
    /// Build a tree over the rows of `sample`.
    ///
    /// Recursion stops when a node holds a single point, reaches
    /// `height_limit`, or the drawn split leaves one side empty.
    pub fn build(sample: &EmbeddingMatrix, height_limit: usize, rng: &mut RngStream) -> ITree {
        let mut builder = Builder {
            sample,
            nodes: Vec::with_capacity(2 * sample.n()),
            num_leaves: 0,
            rng,
            height_limit,
        };
        let mut rows: Vec<usize> = (0..sample.n()).collect();
        builder.grow(&mut rows, 0);
        ITree { nodes: builder.nodes, num_leaves: builder.num_leaves }
    }

    /// Reassemble a tree from a preorder node list, checking its structure.
    pub fn from_nodes(nodes: Vec<ITreeNode>, d: usize) -> Result<ITree> {
        fn check(nodes: &[ITreeNode], at: usize, d: usize, next_leaf: &mut u32) -> Result<usize> {
            match nodes.get(at) {
                None => Err(IkeError::format(format!("iTree node {at} out of range"))),
                Some(ITreeNode::Leaf { leaf_index }) => {
                    if *leaf_index != *next_leaf {
                        return Err(IkeError::format("iTree leaves are not numbered in preorder"));
                    }
                    *next_leaf += 1;
                    Ok(at + 1)
                }
                Some(&ITreeNode::Internal { split_dim, split_value, right }) => {
                    if split_dim as usize >= d || !split_value.is_finite() {
                        return Err(IkeError::format(format!("invalid split at iTree node {at}")));
                    }
                    let end_left = check(nodes, at + 1, d, next_leaf)?;
                    if end_left != right as usize {
                        return Err(IkeError::format(format!("bad right-child offset at iTree node {at}")));
                    }
                    check(nodes, end_left, d, next_leaf)
                }
            }
        }
        let mut num_leaves = 0;
        let end = check(&nodes, 0, d, &mut num_leaves)?;
        if end != nodes.len() {
            return Err(IkeError::format("trailing nodes after iTree"));
        }
        Ok(ITree { nodes, num_leaves })
    }

    pub fn nodes(&self) -> &[ITreeNode] {
        &self.nodes
    }

    pub fn num_leaves(&self) -> usize {
        self.num_leaves as usize
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[ITreeNode], at: usize) -> (usize, usize) {
            match nodes[at] {
                ITreeNode::Leaf { .. } => (0, at + 1),
                ITreeNode::Internal { right, .. } => {
                    let (dl, _) = walk(nodes, at + 1);
                    let (dr, end) = walk(nodes, right as usize);
                    (1 + dl.max(dr), end)
                }
            }
        }
        walk(&self.nodes, 0).0
    }

    #[inline]
    pub fn leaf_of(&self, x: &[f32]) -> u32 {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                ITreeNode::Leaf { leaf_index } => return leaf_index,
                ITreeNode::Internal { split_dim, split_value, right } => {
                    at = if x[split_dim as usize] < split_value { at + 1 } else { right as usize };
                }
            }
        }
    }
}

impl Partition for ITree {
    fn cell(&self, x: &[f32]) -> u32 {
        self.leaf_of(x)
    }

    fn num_cells(&self) -> usize {
        self.num_leaves()
    }
}

struct Builder<'a> {
    sample: &'a EmbeddingMatrix,
    nodes: Vec<ITreeNode>,
    num_leaves: u32,
    rng: &'a mut RngStream,
    height_limit: usize,
}

impl Builder<'_> {
    fn leaf(&mut self) {
        self.nodes.push(ITreeNode::Leaf { leaf_index: self.num_leaves });
        self.num_leaves += 1;
    }

    fn grow(&mut self, rows: &mut [usize], depth: usize) {
        if rows.len() <= 1 || depth >= self.height_limit {
            return self.leaf();
        }
        let q = self.rng.random_range(0..self.sample.d());
        let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
        for &r in rows.iter() {
            let v = self.sample.row(r)[q];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo >= hi {
            return self.leaf();
        }
        let p: f32 = self.rng.random_range(lo..hi);
        let split = partition_in_place(rows, |&r| self.sample.row(r)[q] < p);
        if split == 0 || split == rows.len() {
            return self.leaf();
        }
        let me = self.nodes.len();
        self.nodes.push(ITreeNode::Internal { split_dim: q as u32, split_value: p, right: 0 });
        let (left, right) = rows.split_at_mut(split);
        self.grow(left, depth + 1);
        let right_at = self.nodes.len() as u32;
        if let ITreeNode::Internal { right, .. } = &mut self.nodes[me] {
            *right = right_at;
        }
        self.grow(right, depth + 1);
    }
}

/// Stable-enough in-place partition: elements satisfying `pred` first.
fn partition_in_place<T, F: Fn(&T) -> bool>(xs: &mut [T], pred: F) -> usize {
    let mut next = 0;
    for i in 0..xs.len() {
        if pred(&xs[i]) {
            xs.swap(i, next);
            next += 1;
        }
    }
    next
}

/// Ensemble of `t` independently built isolation trees.
#[derive(Debug, Clone, PartialEq)]
pub struct IForest {
    trees: Vec<ITree>,
    params: IkeParams,
    d: usize,
}

impl IForest {
    /// Tree `i` is built from `subsample(data, psi, stream(seed, i))` and the
    /// rest of that same stream, so the result is independent of the number of
    /// worker threads.
    pub fn build(data: &EmbeddingMatrix, params: &IkeParams) -> Result<IForest> {
        if params.psi > data.n() {
            return Err(IkeError::param(format!(
                "sample size psi={} exceeds corpus size n={}",
                params.psi,
                data.n()
            )));
        }
        let height = params.height_limit();
        let trees = (0..params.t)
            .into_par_iter()
            .map(|i| {
                let mut rng = partition_stream(params.seed, i);
                let ids = subsample(data.n(), params.psi, &mut rng)?;
                Ok(ITree::build(&data.select(&ids), height, &mut rng))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(IForest { trees, params: *params, d: data.d() })
    }

    pub fn from_parts(trees: Vec<ITree>, params: IkeParams, d: usize) -> Result<IForest> {
        if trees.len() != params.t {
            return Err(IkeError::format(format!("expected {} trees, found {}", params.t, trees.len())));
        }
        if let Some(i) = trees.iter().position(|t| t.num_leaves() > params.psi) {
            return Err(IkeError::format(format!("tree {i} has more than psi={} leaves", params.psi)));
        }
        Ok(IForest { trees, params, d })
    }

    pub fn trees(&self) -> &[ITree] {
        &self.trees
    }

    pub fn params(&self) -> &IkeParams {
        &self.params
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn map_point(&self, x: &[f32]) -> Result<PartitionIndexVector> {
        if x.len() != self.d {
            return Err(IkeError::param(format!("point has {} dims, forest expects {}", x.len(), self.d)));
        }
        Ok(PartitionIndexVector(self.trees.iter().map(|t| t.leaf_of(x)).collect()))
    }

    /// Same as [`map_point`](Self::map_point) into a caller-provided buffer.
    pub fn map_into(&self, x: &[f32], out: &mut [u32]) {
        for (o, t) in out.iter_mut().zip(&self.trees) {
            *o = t.leaf_of(x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use rand::Rng;

    fn uniform(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = stream(seed, Domain::Experiment, 0);
        EmbeddingMatrix::new(n, d, (0..n * d).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    /// Independent traversal oracle: recursive descent over the node list.
    fn descend(nodes: &[ITreeNode], at: usize, x: &[f32]) -> u32 {
        match nodes[at] {
            ITreeNode::Leaf { leaf_index } => leaf_index,
            ITreeNode::Internal { split_dim, split_value, right } => {
                if x[split_dim as usize] >= split_value {
                    descend(nodes, right as usize, x)
                } else {
                    descend(nodes, at + 1, x)
                }
            }
        }
    }

    #[test]
    fn single_point_is_single_leaf() {
        let s = EmbeddingMatrix::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let t = ITree::build(&s, 5, &mut stream(0, Domain::Experiment, 0));
        assert_eq!(t.nodes(), &[ITreeNode::Leaf { leaf_index: 0 }]);
        assert_eq!(t.leaf_of(&[100.0, -4.0, 0.0]), 0);
    }

    #[test]
    fn two_points_one_split() {
        for seed in 0..50 {
            let s = EmbeddingMatrix::new(2, 1, vec![0.0, 1.0]).unwrap();
            let t = ITree::build(&s, 1, &mut stream(seed, Domain::Experiment, 0));
            let ITreeNode::Internal { split_value, .. } = t.nodes()[0] else {
                panic!("expected a split");
            };
            // p == 0.0 would leave the left side empty and terminate instead.
            assert!((0.0..1.0).contains(&split_value));
            if split_value > 0.0 {
                assert_eq!(t.num_leaves(), 2);
                assert_eq!(t.leaf_of(&[0.0]), 0);
                assert_eq!(t.leaf_of(&[1.0]), 1);
                assert_eq!(t.leaf_of(&[-5.0]), 0);
                assert_eq!(t.leaf_of(&[split_value]), 1, "ties route right");
            }
        }
    }

    #[test]
    fn identical_points_terminate() {
        let s = EmbeddingMatrix::new(4, 2, vec![0.5; 8]).unwrap();
        let t = ITree::build(&s, 2, &mut stream(1, Domain::Experiment, 0));
        assert_eq!(t.num_leaves(), 1);
    }

    #[test]
    fn sample_points_land_in_their_construction_leaf() {
        // Oracle: follow each sample row's membership through the splits,
        // recording the leaf whose subset holds it.
        for seed in 0..40 {
            let s = uniform(8, 4, seed);
            let t = ITree::build(&s, 3, &mut stream(seed, Domain::Partition, 9));
            assert!(t.depth() <= 3);
            assert!(t.num_leaves() <= 8);
            fn members(nodes: &[ITreeNode], at: usize, rows: Vec<usize>, s: &EmbeddingMatrix, out: &mut Vec<(usize, u32)>) -> usize {
                match nodes[at] {
                    ITreeNode::Leaf { leaf_index } => {
                        out.extend(rows.into_iter().map(|r| (r, leaf_index)));
                        at + 1
                    }
                    ITreeNode::Internal { split_dim, split_value, right } => {
                        let (l, r): (Vec<usize>, Vec<usize>) =
                            rows.into_iter().partition(|&r| s.row(r)[split_dim as usize] < split_value);
                        assert!(!l.is_empty() && !r.is_empty(), "construction never makes empty children");
                        members(nodes, at + 1, l, s, out);
                        members(nodes, right as usize, r, s, out)
                    }
                }
            }
            let mut got = Vec::new();
            members(t.nodes(), 0, (0..8).collect(), &s, &mut got);
            for (row, leaf) in got {
                assert_eq!(t.leaf_of(s.row(row)), leaf);
            }
        }
    }

    #[test]
    fn forest_mapping_matches_descent_oracle() {
        let data = uniform(500, 6, 3);
        let params = IkeParams::new(32, 8, 77).unwrap();
        let forest = IForest::build(&data, &params).unwrap();
        let queries = uniform(1000, 6, 4);
        for q in queries.rows() {
            let got = forest.map_point(q).unwrap();
            let want: Vec<u32> = forest.trees().iter().map(|t| descend(t.nodes(), 0, q)).collect();
            assert_eq!(got.0, want);
        }
    }

    #[test]
    fn node_count_bound_and_depth() {
        let data = uniform(2000, 16, 5);
        let params = IkeParams::new(512, 12, 1).unwrap();
        let forest = IForest::build(&data, &params).unwrap();
        for t in forest.trees() {
            assert!(t.nodes().len() < 2 * 12);
            assert!(t.depth() <= 4);
            assert!(t.num_leaves() <= 12);
        }
    }

    #[test]
    fn psi_one_maps_to_zero() {
        let data = uniform(10, 3, 0);
        let params = IkeParams { t: 5, psi: 1, n_b: 1, m: None, seed: 0 };
        let forest = IForest::build(&data, &params).unwrap();
        assert_eq!(forest.map_point(&[9.0, 9.0, 9.0]).unwrap().0, vec![0; 5]);
    }

    #[test]
    fn build_is_thread_count_independent() {
        let data = uniform(300, 5, 8);
        let params = IkeParams::new(64, 4, 2024).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| IForest::build(&data, &params).unwrap());
        let b = many.install(|| IForest::build(&data, &params).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.trees().len(), 64);
    }

    #[test]
    fn errors() {
        let data = uniform(3, 2, 0);
        assert!(IForest::build(&data, &IkeParams::new(1, 4, 0).unwrap()).is_err());
        let f = IForest::build(&data, &IkeParams::new(1, 2, 0).unwrap()).unwrap();
        assert!(matches!(f.map_point(&[1.0]), Err(IkeError::Param(_))));
    }

    #[test]
    fn from_nodes_validates() {
        let good = vec![
            ITreeNode::Internal { split_dim: 0, split_value: 0.5, right: 2 },
            ITreeNode::Leaf { leaf_index: 0 },
            ITreeNode::Leaf { leaf_index: 1 },
        ];
        assert!(ITree::from_nodes(good.clone(), 1).is_ok());
        let mut bad = good.clone();
        bad[0] = ITreeNode::Internal { split_dim: 0, split_value: 0.5, right: 1 };
        assert!(ITree::from_nodes(bad, 1).is_err());
        assert!(ITree::from_nodes(good, 0).is_err());
    }
}
