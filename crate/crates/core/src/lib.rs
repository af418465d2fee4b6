//! Isolation-kernel binary embeddings for dense-vector retrieval.
//!
//! A model of `t` random partitions (isolation trees, or Voronoi diagrams on
//! random subspaces) maps each float embedding to the index of the cell it
//! falls in for every partition. Those indices are packed into `n_b`-bit
//! fields, and two codes are compared by counting equal fields, which is an
//! estimate of the isolation kernel. The crate provides:
//!
//! - [`iforest`], [`voronoi`], [`rplsh`]: the partitioners and a sign-hash baseline
//! - [`codec`]: packing plus the XOR/shift/OR/mask/popcount match kernel
//! - [`index`]: exhaustive, HNSW and IVF search over codes
//! - [`eval`]: TREC qrels/run files, MRR, nDCG, overlap and QPS measurement
//! - [`properties`]: statistical checks of entropy, bit independence and
//!   partition diversity
//! - [`model`], [`io`]: model and vector file formats

pub mod codec;
pub mod error;
pub mod eval;
pub mod iforest;
pub mod index;
pub mod io;
pub mod model;
pub mod partition;
pub mod properties;
pub mod rng;
pub mod rplsh;
pub mod synth;
pub mod types;
pub mod voronoi;

pub use codec::{kernel_estimate, match_count, pack, CodeWriter, PackedCodes, SegmentMask};
pub use error::{IkeError, Result};
pub use iforest::{IForest, ITree, ITreeNode};
pub use index::{exhaustive_topk, HnswIndex, IvfIndex, Neighbor, SearchResult};
pub use model::{IkeModel, ModelKind};
pub use partition::Partition;
pub use rplsh::RplshModel;
pub use synth::Clusters;
pub use types::{derive_nb, subsample, EmbeddingMatrix, IkeParams, PartitionIndexVector};
pub use voronoi::{VdModel, VoronoiPartition};
