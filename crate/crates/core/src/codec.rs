//! Bit-packed partition codes and the match-count kernel.
//!
//! Element `i` of a point occupies bits `[i*n_b, (i+1)*n_b)` of the point's
//! code, least significant bit first within little-endian 64-bit words.
//! Because `n_b` divides 64 no element straddles a word boundary. Unused bits
//! of the last word are zero.
//!
//! Two codes are compared word by word:
//!
//! ```text
//! D = a ^ b
//! M = D | D >> 1 | ... | D >> (n_b - 1)    // any differing bit reaches the segment's low bit
//! M = M | mask                             // every bit except segment low bits, plus padding
//! matches += 64 - popcount(M)
//! ```
//!
//! For `n_b = 1` this is just `t - popcount(a ^ b)`.

use std::io::{Read, Seek, SeekFrom, Write};

use crate::error::{IkeError, Result};
use crate::types::{PartitionIndexVector, SUPPORTED_NB};

pub const CODE_MAGIC: &[u8; 4] = b"IKEC";
pub const CODE_VERSION: u16 = 1;

/// Mask words for one `(t, n_b)` layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentMask {
    /// All bits set except the lowest bit of each `n_b`-bit segment.
    pub word: u64,
    /// `word` with every padding bit of the final word also set.
    pub tail: u64,
}

impl SegmentMask {
    pub fn new(t: usize, n_b: u8) -> SegmentMask {
        let low_bits = match n_b {
            1 => u64::MAX,
            2 => 0x5555_5555_5555_5555,
            4 => 0x1111_1111_1111_1111,
            8 => 0x0101_0101_0101_0101,
            _ => panic!("unsupported n_b={n_b}"),
        };
        let word = !low_bits;
        let used = (t * n_b as usize) % 64;
        let padding = if used == 0 { 0 } else { u64::MAX << used };
        SegmentMask { word, tail: word | padding }
    }
}

pub fn check_nb(n_b: u8) -> Result<()> {
    if SUPPORTED_NB.contains(&n_b) {
        Ok(())
    } else {
        Err(IkeError::Encoding(format!("n_b must be one of 1, 2, 4, 8; got {n_b}")))
    }
}

pub fn words_per_point(t: usize, n_b: u8) -> usize {
    (t * n_b as usize).div_ceil(64)
}

/// `n` bit-packed codes of `t` elements each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    n: usize,
    t: usize,
    n_b: u8,
    words_per_point: usize,
    data: Vec<u64>,
}

impl PackedCodes {
    pub fn empty(t: usize, n_b: u8) -> Result<PackedCodes> {
        check_nb(n_b)?;
        Ok(PackedCodes { n: 0, t, n_b, words_per_point: words_per_point(t, n_b), data: Vec::new() })
    }

    /// Wrap raw words, rejecting set padding bits.
    pub fn from_words(n: usize, t: usize, n_b: u8, data: Vec<u64>) -> Result<PackedCodes> {
        check_nb(n_b)?;
        let wpp = words_per_point(t, n_b);
        if data.len() != n * wpp {
            return Err(IkeError::Encoding(format!(
                "{n} codes of {wpp} words need {} words, got {}",
                n * wpp,
                data.len()
            )));
        }
        let used = (t * n_b as usize) % 64;
        let pad = if used == 0 { 0 } else { !0u64 << used };
        if wpp > 0 && pad != 0 && data.chunks_exact(wpp).any(|c| c[wpp - 1] & pad != 0) {
            return Err(IkeError::Encoding("padding bits must be zero".into()));
        }
        Ok(PackedCodes { n, t, n_b, words_per_point: wpp, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn n_b(&self) -> u8 {
        self.n_b
    }

    pub fn words_per_point(&self) -> usize {
        self.words_per_point
    }

    pub fn bytes_per_point(&self) -> usize {
        self.words_per_point * 8
    }

    pub fn code(&self, i: usize) -> &[u64] {
        &self.data[i * self.words_per_point..(i + 1) * self.words_per_point]
    }

    pub fn words(&self) -> &[u64] {
        &self.data
    }

    pub fn mask(&self) -> SegmentMask {
        SegmentMask::new(self.t, self.n_b)
    }

    pub fn push(&mut self, indices: &[u32]) -> Result<()> {
        if indices.len() != self.t {
            return Err(IkeError::Encoding(format!("expected {} elements, got {}", self.t, indices.len())));
        }
        let start = self.data.len();
        self.data.resize(start + self.words_per_point, 0);
        pack_into(indices, self.n_b, &mut self.data[start..])?;
        self.n += 1;
        Ok(())
    }

    /// Append every code of `other`, which must share `(t, n_b)`.
    pub fn extend(&mut self, other: &PackedCodes) -> Result<()> {
        if (other.t, other.n_b) != (self.t, self.n_b) {
            return Err(IkeError::Encoding("cannot concatenate codes with different (t, n_b)".into()));
        }
        self.data.extend_from_slice(&other.data);
        self.n += other.n;
        Ok(())
    }

    pub fn unpack(&self, i: usize) -> PartitionIndexVector {
        PartitionIndexVector(unpack(self.code(i), self.t, self.n_b))
    }

    /// Keep the first `t_prime` elements of every code.
    pub fn truncate(&self, t_prime: usize) -> Result<PackedCodes> {
        if t_prime > self.t || t_prime == 0 {
            return Err(IkeError::param(format!("t'={t_prime} must be in [1, {}]", self.t)));
        }
        if t_prime == self.t {
            return Ok(self.clone());
        }
        let per_word = 64 / self.n_b as usize;
        if !t_prime.is_multiple_of(per_word) {
            let below = t_prime / per_word * per_word;
            let above = (below + per_word).min(self.t);
            let mut hint = Vec::new();
            if below > 0 {
                hint.push(below.to_string());
            }
            if above != below {
                hint.push(above.to_string());
            }
            return Err(IkeError::param(format!(
                "t'={t_prime} is not word aligned for n_b={} (multiples of {per_word}); nearest valid: {}",
                self.n_b,
                hint.join(" or ")
            )));
        }
        let wpp = t_prime / per_word;
        let data = self.data.chunks_exact(self.words_per_point).flat_map(|c| &c[..wpp]).copied().collect();
        Ok(PackedCodes { n: self.n, t: t_prime, n_b: self.n_b, words_per_point: wpp, data })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&code_header(self.n, self.t, self.n_b)?)?;
        write_words(&mut w, &self.data)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<PackedCodes> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header).map_err(|e| truncated(e, "code file header"))?;
        if &header[..4] != CODE_MAGIC {
            return Err(IkeError::format("not a code file (bad magic)"));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != CODE_VERSION {
            return Err(IkeError::format(format!("unsupported code file version {version}")));
        }
        let n_b = header[6];
        check_nb(n_b).map_err(|_| IkeError::format(format!("invalid n_b={n_b} in code file")))?;
        let t = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let n = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let total = n * words_per_point(t, n_b);
        let mut bytes = vec![0u8; total * 8];
        r.read_exact(&mut bytes).map_err(|e| truncated(e, "code file payload"))?;
        let data = bytes.chunks_exact(8).map(|b| u64::from_le_bytes(b.try_into().unwrap())).collect();
        PackedCodes::from_words(n, t, n_b, data).map_err(|e| IkeError::format(e.to_string()))
    }
}

fn code_header(n: usize, t: usize, n_b: u8) -> Result<[u8; 16]> {
    let n = u32::try_from(n).map_err(|_| IkeError::format("too many codes for the file header"))?;
    let t = u32::try_from(t).map_err(|_| IkeError::format("t too large for the file header"))?;
    let mut header = [0u8; 16];
    header[..4].copy_from_slice(CODE_MAGIC);
    header[4..6].copy_from_slice(&CODE_VERSION.to_le_bytes());
    header[6] = n_b;
    header[8..12].copy_from_slice(&t.to_le_bytes());
    header[12..16].copy_from_slice(&n.to_le_bytes());
    Ok(header)
}

fn write_words<W: Write>(w: &mut W, words: &[u64]) -> Result<()> {
    let mut buf = Vec::with_capacity(words.len().min(1 << 16) * 8);
    for chunk in words.chunks(1 << 16) {
        buf.clear();
        buf.extend(chunk.iter().flat_map(|x| x.to_le_bytes()));
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Appends code batches to a code file and fills in the count on `finish`.
pub struct CodeWriter<W: Write + Seek> {
    w: W,
    t: usize,
    n_b: u8,
    n: usize,
}

impl<W: Write + Seek> CodeWriter<W> {
    pub fn new(mut w: W, t: usize, n_b: u8) -> Result<Self> {
        check_nb(n_b)?;
        w.write_all(&code_header(0, t, n_b)?)?;
        Ok(CodeWriter { w, t, n_b, n: 0 })
    }

    pub fn append(&mut self, codes: &PackedCodes) -> Result<()> {
        if (codes.t, codes.n_b) != (self.t, self.n_b) {
            return Err(IkeError::Encoding("code batch layout differs from the file".into()));
        }
        write_words(&mut self.w, &codes.data)?;
        self.n += codes.n;
        Ok(())
    }

    /// Rewrite the header with the final count; returns that count.
    pub fn finish(mut self) -> Result<usize> {
        self.w.seek(SeekFrom::Start(0))?;
        self.w.write_all(&code_header(self.n, self.t, self.n_b)?)?;
        self.w.flush()?;
        Ok(self.n)
    }
}

pub(crate) fn truncated(e: std::io::Error, what: &str) -> IkeError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        IkeError::format(format!("truncated {what}"))
    } else {
        IkeError::Io(e)
    }
}

/// Pack one index vector into `out` (which must be zeroed and sized
/// `words_per_point(indices.len(), n_b)`).
pub fn pack_into(indices: &[u32], n_b: u8, out: &mut [u64]) -> Result<()> {
    check_nb(n_b)?;
    let limit = 1u64 << n_b;
    let nb = n_b as usize;
    for (i, &v) in indices.iter().enumerate() {
        if v as u64 >= limit {
            return Err(IkeError::Encoding(format!("index {v} at element {i} does not fit in {n_b} bits")));
        }
        let bit = i * nb;
        out[bit / 64] |= (v as u64) << (bit % 64);
    }
    Ok(())
}

pub fn pack(indices: &[PartitionIndexVector], t: usize, n_b: u8) -> Result<PackedCodes> {
    let mut codes = PackedCodes::empty(t, n_b)?;
    codes.data.reserve(indices.len() * codes.words_per_point);
    for v in indices {
        codes.push(v.as_slice())?;
    }
    Ok(codes)
}

pub fn unpack(code: &[u64], t: usize, n_b: u8) -> Vec<u32> {
    let nb = n_b as usize;
    let lane = (1u64 << nb) - 1;
    (0..t).map(|i| ((code[i * nb / 64] >> (i * nb % 64)) & lane) as u32).collect()
}

#[inline(always)]
fn fold_segments<const NB: u32>(d: u64) -> u64 {
    let mut m = d;
    if NB >= 2 {
        m |= m >> 1;
    }
    if NB >= 4 {
        m |= m >> 2;
    }
    if NB >= 8 {
        m |= m >> 4;
    }
    m
}

#[inline(always)]
fn count_generic<const NB: u32>(a: &[u64], b: &[u64], mask: SegmentMask) -> u32 {
    let last = a.len() - 1;
    let mut zeros = 0u32;
    for (x, y) in a[..last].iter().zip(&b[..last]) {
        zeros += (fold_segments::<NB>(x ^ y) | mask.word).count_zeros();
    }
    zeros + (fold_segments::<NB>(a[last] ^ b[last]) | mask.tail).count_zeros()
}

#[inline(always)]
fn count_binary(a: &[u64], b: &[u64], t: u32) -> u32 {
    t - a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum::<u32>()
}

#[inline(always)]
fn count_dispatch(a: &[u64], b: &[u64], t: u32, n_b: u8, mask: SegmentMask) -> u32 {
    match n_b {
        1 => count_binary(a, b, t),
        2 => count_generic::<2>(a, b, mask),
        4 => count_generic::<4>(a, b, mask),
        _ => count_generic::<8>(a, b, mask),
    }
}

/// Match count between two codes of the same layout, given a precomputed
/// mask. This is the unchecked inner kernel; see [`match_count`].
#[inline]
pub fn match_count_raw(a: &[u64], b: &[u64], t: usize, n_b: u8, mask: SegmentMask) -> u32 {
    if t == 0 {
        return 0;
    }
    count_dispatch(a, b, t as u32, n_b, mask)
}

/// Number of positions at which the two codes hold the same index.
pub fn match_count(a: &[u64], b: &[u64], t: usize, n_b: u8) -> Result<u32> {
    check_nb(n_b)?;
    let wpp = words_per_point(t, n_b);
    if a.len() != wpp || b.len() != wpp {
        return Err(IkeError::Encoding(format!(
            "codes of {} and {} words do not match layout t={t}, n_b={n_b} ({wpp} words)",
            a.len(),
            b.len()
        )));
    }
    Ok(match_count_raw(a, b, t, n_b, SegmentMask::new(t, n_b)))
}

/// Isolation-kernel estimate: fraction of partitions shared by both points.
pub fn kernel_estimate(a: &[u64], b: &[u64], t: usize, n_b: u8) -> Result<f64> {
    if t == 0 {
        return Err(IkeError::Encoding("t must be at least 1".into()));
    }
    Ok(match_count(a, b, t, n_b)? as f64 / t as f64)
}

/// Match counts of `query` against every code in `codes[range]`, written to
/// `out` in order. Equivalent to calling [`match_count`] per point.
pub fn scan_range(codes: &PackedCodes, query: &[u64], start: usize, out: &mut [u32]) -> Result<()> {
    if query.len() != codes.words_per_point {
        return Err(IkeError::Encoding(format!(
            "query has {} words, database codes have {}",
            query.len(),
            codes.words_per_point
        )));
    }
    if start + out.len() > codes.n {
        return Err(IkeError::param("scan range exceeds the database"));
    }
    if codes.t == 0 {
        out.fill(0);
        return Ok(());
    }
    let wpp = codes.words_per_point;
    let block = &codes.data[start * wpp..(start + out.len()) * wpp];
    scan_block(block, query, codes.t, codes.n_b, codes.mask(), out);
    Ok(())
}

pub fn scan(codes: &PackedCodes, query: &[u64], out: &mut [u32]) -> Result<()> {
    scan_range(codes, query, 0, out)
}

fn scan_block(block: &[u64], query: &[u64], t: usize, n_b: u8, mask: SegmentMask, out: &mut [u32]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("popcnt") {
            // SAFETY: the feature was detected at runtime.
            unsafe { scan_block_popcnt(block, query, t, n_b, mask, out) };
            return;
        }
    }
    scan_block_portable(block, query, t, n_b, mask, out)
}

#[inline(always)]
fn scan_block_body(block: &[u64], query: &[u64], t: usize, n_b: u8, mask: SegmentMask, out: &mut [u32]) {
    let wpp = query.len();
    let t = t as u32;
    match n_b {
        1 => {
            for (o, c) in out.iter_mut().zip(block.chunks_exact(wpp)) {
                *o = count_binary(c, query, t);
            }
        }
        2 => {
            for (o, c) in out.iter_mut().zip(block.chunks_exact(wpp)) {
                *o = count_generic::<2>(c, query, mask);
            }
        }
        4 => {
            for (o, c) in out.iter_mut().zip(block.chunks_exact(wpp)) {
                *o = count_generic::<4>(c, query, mask);
            }
        }
        _ => {
            for (o, c) in out.iter_mut().zip(block.chunks_exact(wpp)) {
                *o = count_generic::<8>(c, query, mask);
            }
        }
    }
}

fn scan_block_portable(block: &[u64], query: &[u64], t: usize, n_b: u8, mask: SegmentMask, out: &mut [u32]) {
    scan_block_body(block, query, t, n_b, mask, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn scan_block_popcnt(block: &[u64], query: &[u64], t: usize, n_b: u8, mask: SegmentMask, out: &mut [u32]) {
    scan_block_body(block, query, t, n_b, mask, out)
}
