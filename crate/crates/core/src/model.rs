//! A built encoder of any kind, plus the self-describing model file.
//!
//! Model file layout, little-endian, no padding:
//!
//! ```text
//! "IKE1" | version u16 | kind u8 | d u32 | t u32 | psi u32 | m u32 | n_b u8 | seed u64
//! payload:
//!   kind 0 (iforest): per tree, node count u32 then 13-byte preorder records
//!                     { flag u8 (0 internal, 1 leaf), split_dim | leaf_index u32,
//!                       split_value f32, right_child_offset u32 }
//!   kind 1 (voronoi): per partition, m dim ids u32 then psi*m anchor values f32
//!   kind 2 (rplsh):   "IKEL" | t_bits u32 | d u32 | t_bits*d f32
//! ```

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::codec::{pack_into, truncated, words_per_point, PackedCodes};
use crate::error::{IkeError, Result};
use crate::iforest::{IForest, ITree, ITreeNode};
use crate::rplsh::RplshModel;
use crate::types::{derive_nb, EmbeddingMatrix, IkeParams, PartitionIndexVector};
use crate::voronoi::{VdModel, VoronoiPartition};

pub const MODEL_MAGIC: &[u8; 4] = b"IKE1";
pub const MODEL_VERSION: u16 = 1;
const LSH_MAGIC: &[u8; 4] = b"IKEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    IForest,
    Voronoi,
    Rplsh,
}

impl ModelKind {
    fn tag(self) -> u8 {
        match self {
            ModelKind::IForest => 0,
            ModelKind::Voronoi => 1,
            ModelKind::Rplsh => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ModelKind::IForest),
            1 => Ok(ModelKind::Voronoi),
            2 => Ok(ModelKind::Rplsh),
            _ => Err(IkeError::format(format!("unknown model kind {tag}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IkeModel {
    IForest(IForest),
    Voronoi(VdModel),
    Rplsh(RplshModel),
}

impl IkeModel {
    pub fn build(kind: ModelKind, data: &EmbeddingMatrix, params: &IkeParams) -> Result<IkeModel> {
        Ok(match kind {
            ModelKind::IForest => IkeModel::IForest(IForest::build(data, params)?),
            ModelKind::Voronoi => IkeModel::Voronoi(VdModel::build(data, params)?),
            ModelKind::Rplsh => IkeModel::Rplsh(RplshModel::new(params.t, data.d(), params.seed)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            IkeModel::IForest(_) => ModelKind::IForest,
            IkeModel::Voronoi(_) => ModelKind::Voronoi,
            IkeModel::Rplsh(_) => ModelKind::Rplsh,
        }
    }

    pub fn d(&self) -> usize {
        match self {
            IkeModel::IForest(f) => f.d(),
            IkeModel::Voronoi(v) => v.d(),
            IkeModel::Rplsh(l) => l.d(),
        }
    }

    /// Code parameters. rpLSH reports `psi = 2`, `n_b = 1`.
    pub fn params(&self) -> IkeParams {
        match self {
            IkeModel::IForest(f) => *f.params(),
            IkeModel::Voronoi(v) => *v.params(),
            IkeModel::Rplsh(l) => IkeParams { t: l.t_bits(), psi: 2, n_b: 1, m: None, seed: l.seed() },
        }
    }

    pub fn t(&self) -> usize {
        self.params().t
    }

    pub fn n_b(&self) -> u8 {
        self.params().n_b
    }

    pub fn map_point(&self, x: &[f32]) -> Result<PartitionIndexVector> {
        match self {
            IkeModel::IForest(f) => f.map_point(x),
            IkeModel::Voronoi(v) => v.map_point(x),
            IkeModel::Rplsh(l) => l.map_point(x),
        }
    }

    fn map_into(&self, x: &[f32], out: &mut [u32]) {
        match self {
            IkeModel::IForest(f) => f.map_into(x, out),
            IkeModel::Voronoi(v) => v.map_into(x, out),
            IkeModel::Rplsh(l) => l.map_into(x, out),
        }
    }

    pub fn encode_point(&self, x: &[f32]) -> Result<Vec<u64>> {
        let idx = self.map_point(x)?;
        let mut code = vec![0; words_per_point(self.t(), self.n_b())];
        pack_into(idx.as_slice(), self.n_b(), &mut code)?;
        Ok(code)
    }

    /// Map and pack every row of a row-major `? x d` slice, in parallel.
    pub fn encode(&self, rows: &[f32]) -> Result<PackedCodes> {
        let d = self.d();
        if !rows.len().is_multiple_of(d) {
            return Err(IkeError::param(format!("input length {} is not a multiple of d={d}", rows.len())));
        }
        let (t, n_b) = (self.t(), self.n_b());
        let wpp = words_per_point(t, n_b);
        let n = rows.len() / d;
        let mut words = vec![0u64; n * wpp];
        if wpp > 0 {
            words.par_chunks_mut(wpp).zip(rows.par_chunks(d)).try_for_each_init(
                || vec![0u32; t],
                |buf, (out, x)| {
                    self.map_into(x, buf);
                    pack_into(buf, n_b, out)
                },
            )?;
        }
        PackedCodes::from_words(n, t, n_b, words)
    }

    pub fn encode_matrix(&self, data: &EmbeddingMatrix) -> Result<PackedCodes> {
        if data.d() != self.d() {
            return Err(IkeError::param(format!(
                "vectors have d={}, model expects d={}",
                data.d(),
                self.d()
            )));
        }
        self.encode(data.as_slice())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let p = self.params();
        let u32_of = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| IkeError::format(format!("{what}={v} does not fit the model header")))
        };
        let mut buf = Vec::with_capacity(64);
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.push(self.kind().tag());
        buf.extend_from_slice(&u32_of(self.d(), "d")?.to_le_bytes());
        buf.extend_from_slice(&u32_of(p.t, "t")?.to_le_bytes());
        buf.extend_from_slice(&u32_of(p.psi, "psi")?.to_le_bytes());
        buf.extend_from_slice(&u32_of(p.m.unwrap_or(0), "m")?.to_le_bytes());
        buf.push(p.n_b);
        buf.extend_from_slice(&p.seed.to_le_bytes());
        match self {
            IkeModel::IForest(f) => {
                for tree in f.trees() {
                    buf.extend_from_slice(&(tree.nodes().len() as u32).to_le_bytes());
                    for node in tree.nodes() {
                        let (flag, a, v, r) = match *node {
                            ITreeNode::Internal { split_dim, split_value, right } => (0u8, split_dim, split_value, right),
                            ITreeNode::Leaf { leaf_index } => (1u8, leaf_index, 0.0, 0),
                        };
                        buf.push(flag);
                        buf.extend_from_slice(&a.to_le_bytes());
                        buf.extend_from_slice(&v.to_le_bytes());
                        buf.extend_from_slice(&r.to_le_bytes());
                    }
                    if buf.len() > 1 << 20 {
                        w.write_all(&buf)?;
                        buf.clear();
                    }
                }
            }
            IkeModel::Voronoi(v) => {
                for part in v.partitions() {
                    part.dims().iter().for_each(|q| buf.extend_from_slice(&q.to_le_bytes()));
                    part.anchors().iter().for_each(|a| buf.extend_from_slice(&a.to_le_bytes()));
                    if buf.len() > 1 << 20 {
                        w.write_all(&buf)?;
                        buf.clear();
                    }
                }
            }
            IkeModel::Rplsh(l) => {
                buf.extend_from_slice(LSH_MAGIC);
                buf.extend_from_slice(&u32_of(l.t_bits(), "t_bits")?.to_le_bytes());
                buf.extend_from_slice(&u32_of(l.d(), "d")?.to_le_bytes());
                for chunk in l.projection().chunks(1 << 18) {
                    chunk.iter().for_each(|a| buf.extend_from_slice(&a.to_le_bytes()));
                    w.write_all(&buf)?;
                    buf.clear();
                }
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<IkeModel> {
        let mut r = Reader(r);
        if &r.bytes::<4>()? != MODEL_MAGIC {
            return Err(IkeError::format("not a model file (bad magic)"));
        }
        let version = u16::from_le_bytes(r.bytes()?);
        if version != MODEL_VERSION {
            return Err(IkeError::format(format!("unsupported model file version {version}")));
        }
        let kind = ModelKind::from_tag(r.u8()?)?;
        let d = r.u32()? as usize;
        let t = r.u32()? as usize;
        let psi = r.u32()? as usize;
        let m = r.u32()? as usize;
        let n_b = r.u8()?;
        let seed = u64::from_le_bytes(r.bytes()?);
        if d == 0 || t == 0 {
            return Err(IkeError::format("model header has d=0 or t=0"));
        }
        let mut params = IkeParams { t, psi, n_b, m: (m > 0).then_some(m), seed };
        if kind != ModelKind::Rplsh && derive_nb(psi).ok() != Some(n_b) {
            return Err(IkeError::format(format!("header n_b={n_b} inconsistent with psi={psi}")));
        }
        Ok(match kind {
            ModelKind::IForest => {
                params.m = None;
                let mut trees = Vec::with_capacity(t);
                for _ in 0..t {
                    let count = r.u32()? as usize;
                    if count == 0 || count > 2 * psi {
                        return Err(IkeError::format(format!("implausible iTree node count {count}")));
                    }
                    let mut nodes = Vec::with_capacity(count);
                    for _ in 0..count {
                        let flag = r.u8()?;
                        let a = r.u32()?;
                        let v = f32::from_le_bytes(r.bytes()?);
                        let right = r.u32()?;
                        nodes.push(match flag {
                            0 => ITreeNode::Internal { split_dim: a, split_value: v, right },
                            1 => ITreeNode::Leaf { leaf_index: a },
                            _ => return Err(IkeError::format(format!("bad iTree node flag {flag}"))),
                        });
                    }
                    trees.push(ITree::from_nodes(nodes, d)?);
                }
                IkeModel::IForest(IForest::from_parts(trees, params, d)?)
            }
            ModelKind::Voronoi => {
                if m == 0 || m > d {
                    return Err(IkeError::format(format!("invalid subspace size m={m}")));
                }
                let mut parts = Vec::with_capacity(t);
                for _ in 0..t {
                    let dims = (0..m).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                    let anchors = r.f32s(psi * m)?;
                    parts.push(VoronoiPartition::from_parts(dims, anchors, d)?);
                }
                IkeModel::Voronoi(VdModel::from_parts(parts, params, d)?)
            }
            ModelKind::Rplsh => {
                if &r.bytes::<4>()? != LSH_MAGIC {
                    return Err(IkeError::format("missing rpLSH payload magic"));
                }
                let (tb, dd) = (r.u32()? as usize, r.u32()? as usize);
                if tb != t || dd != d || n_b != 1 {
                    return Err(IkeError::format("rpLSH payload disagrees with model header"));
                }
                IkeModel::Rplsh(RplshModel::from_parts(t, d, seed, r.f32s(t * d)?)?)
            }
        })
    }
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(|e| truncated(e, "model file"))?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let mut raw = vec![0u8; count * 4];
        self.0.read_exact(&mut raw).map_err(|e| truncated(e, "model file"))?;
        Ok(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
    }
}
