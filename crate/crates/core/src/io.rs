//! Vector file formats.
//!
//! * `.fvecs`: per vector a little-endian `i32` dimension followed by that
//!   many `f32` values.
//! * `.dvecs`: same with `f64` values; down-converted to `f32` on load.
//! * anything else: raw little-endian `f32` rows, with a sidecar
//!   `<path>.hdr` holding `n: u32, d: u32`.
//!
//! Readers stream in chunks so a corpus never has to be resident twice.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{IkeError, Result};
use crate::types::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorFormat {
    Fvecs,
    Dvecs,
    Raw,
}

impl VectorFormat {
    pub fn from_path(path: &Path) -> VectorFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("fvecs") => VectorFormat::Fvecs,
            Some("dvecs") => VectorFormat::Dvecs,
            _ => VectorFormat::Raw,
        }
    }
}

fn with_path(e: std::io::Error, path: &Path) -> IkeError {
    IkeError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// `File::open` with the path in the error message.
pub fn open_file(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| with_path(e, path))
}

/// `File::create` with the path in the error message.
pub fn create_file(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| with_path(e, path))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".hdr");
    PathBuf::from(p)
}

/// Chunked reader over any supported vector file.
pub struct VectorReader {
    inner: BufReader<File>,
    format: VectorFormat,
    d: usize,
    /// Rows left for raw files; unknown (None) for fvecs/dvecs.
    remaining: Option<usize>,
    /// First fvecs/dvecs dimension word, already consumed.
    pending_dim: Option<i32>,
    rows_read: usize,
    warned: bool,
}

impl VectorReader {
    pub fn open(path: &Path) -> Result<VectorReader> {
        let format = VectorFormat::from_path(path);
        let file = open_file(path)?;
        let file_len = file.metadata()?.len();
        let mut inner = BufReader::with_capacity(1 << 20, file);
        let (d, remaining, pending_dim) = match format {
            VectorFormat::Raw => {
                let mut hdr = [0u8; 8];
                open_file(&sidecar_path(path))?
                    .read_exact(&mut hdr)
                    .map_err(|_| IkeError::format("raw vector sidecar header must hold n and d as u32"))?;
                let n = u32::from_le_bytes(hdr[..4].try_into().unwrap()) as u64;
                let d = u32::from_le_bytes(hdr[4..].try_into().unwrap()) as u64;
                if n * d * 4 != file_len {
                    return Err(IkeError::format(format!(
                        "raw vector file holds {file_len} bytes, header says {n}x{d} f32"
                    )));
                }
                if d == 0 && n > 0 {
                    return Err(IkeError::format("raw vector header has d=0"));
                }
                (d as usize, Some(n as usize), None)
            }
            VectorFormat::Fvecs | VectorFormat::Dvecs => {
                if file_len == 0 {
                    (0, None, None)
                } else {
                    let mut b = [0u8; 4];
                    inner.read_exact(&mut b).map_err(|_| IkeError::format("truncated vector record"))?;
                    let dim = i32::from_le_bytes(b);
                    if dim <= 0 {
                        return Err(IkeError::format(format!("record 0 has invalid dimension {dim}")));
                    }
                    let width = if format == VectorFormat::Fvecs { 4 } else { 8 };
                    let rec = 4 + dim as u64 * width;
                    if file_len % rec != 0 {
                        return Err(IkeError::format(format!(
                            "file size {file_len} is not a multiple of the {rec}-byte record size"
                        )));
                    }
                    (dim as usize, None, Some(dim))
                }
            }
        };
        Ok(VectorReader { inner, format, d, remaining, pending_dim, rows_read: 0, warned: false })
    }

    /// Dimensionality, or 0 for an empty fvecs/dvecs file.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Up to `max_rows` rows, or `None` at end of file.
    pub fn next_chunk(&mut self, max_rows: usize) -> Result<Option<Vec<f32>>> {
        let d = self.d;
        let mut out = Vec::with_capacity(max_rows.min(1 << 16) * d);
        match self.format {
            VectorFormat::Raw => {
                let rows = self.remaining.unwrap_or(0).min(max_rows);
                if rows == 0 {
                    return Ok(None);
                }
                let mut raw = vec![0u8; rows * d * 4];
                self.inner.read_exact(&mut raw).map_err(|_| IkeError::format("truncated raw vector file"))?;
                out.extend(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())));
                self.remaining = Some(self.remaining.unwrap() - rows);
                self.rows_read += rows;
            }
            VectorFormat::Fvecs | VectorFormat::Dvecs => {
                let width = if self.format == VectorFormat::Fvecs { 4 } else { 8 };
                let mut raw = vec![0u8; d * width];
                for _ in 0..max_rows {
                    let dim = match self.pending_dim.take() {
                        Some(dim) => dim,
                        None => {
                            let mut b = [0u8; 4];
                            match self.inner.read_exact(&mut b) {
                                Ok(()) => i32::from_le_bytes(b),
                                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                                Err(e) => return Err(e.into()),
                            }
                        }
                    };
                    if dim as usize != d {
                        return Err(IkeError::format(format!(
                            "record {} has dimension {dim}, expected {d}",
                            self.rows_read
                        )));
                    }
                    self.inner.read_exact(&mut raw).map_err(|_| IkeError::format("truncated vector record"))?;
                    if width == 4 {
                        out.extend(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())));
                    } else {
                        if !self.warned {
                            log::warn!("converting 64-bit vectors to 32-bit floats");
                            self.warned = true;
                        }
                        out.extend(raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()) as f32));
                    }
                    self.rows_read += 1;
                }
                if out.is_empty() {
                    return Ok(None);
                }
            }
        }
        if let Some(pos) = out.iter().position(|v| !v.is_finite()) {
            let row = self.rows_read - out.len() / d + pos / d;
            return Err(IkeError::format(format!("non-finite value in vector {row}")));
        }
        Ok(Some(out))
    }

    /// Read everything that is left.
    pub fn read_all(mut self) -> Result<(usize, Vec<f32>)> {
        let mut all = Vec::new();
        while let Some(chunk) = self.next_chunk(1 << 16)? {
            all.extend_from_slice(&chunk);
        }
        Ok((self.d, all))
    }
}

/// Load a whole file as a matrix; fails on empty input.
pub fn read_matrix(path: &Path) -> Result<EmbeddingMatrix> {
    let (d, data) = VectorReader::open(path)?.read_all()?;
    if data.is_empty() {
        return Err(IkeError::format(format!("{} contains no vectors", path.display())));
    }
    EmbeddingMatrix::new(data.len() / d, d, data)
}

pub fn write_fvecs(path: &Path, d: usize, rows: &[f32]) -> Result<()> {
    let mut w = BufWriter::new(create_file(path)?);
    if d > 0 {
        for row in rows.chunks_exact(d) {
            w.write_all(&(d as i32).to_le_bytes())?;
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_raw(path: &Path, d: usize, rows: &[f32]) -> Result<()> {
    let n = rows.len().checked_div(d).unwrap_or(0);
    let mut hdr = Vec::with_capacity(8);
    hdr.extend_from_slice(&(n as u32).to_le_bytes());
    hdr.extend_from_slice(&(d as u32).to_le_bytes());
    std::fs::write(sidecar_path(path), hdr)?;
    let mut w = BufWriter::new(create_file(path)?);
    for v in rows {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Write any supported format, chosen by extension.
pub fn write_vectors(path: &Path, d: usize, rows: &[f32]) -> Result<()> {
    match VectorFormat::from_path(path) {
        VectorFormat::Fvecs => write_fvecs(path, d, rows),
        VectorFormat::Raw => write_raw(path, d, rows),
        VectorFormat::Dvecs => {
            let mut w = BufWriter::new(create_file(path)?);
            for row in rows.chunks_exact(d.max(1)) {
                w.write_all(&(d as i32).to_le_bytes())?;
                for &v in row {
                    w.write_all(&(v as f64).to_le_bytes())?;
                }
            }
            w.flush()?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fvecs_round_trip_and_chunks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.fvecs");
        let rows: Vec<f32> = (0..30).map(|i| i as f32 * 0.5).collect();
        write_fvecs(&path, 3, &rows).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 10 * 16);
        let mut r = VectorReader::open(&path).unwrap();
        assert_eq!(r.d(), 3);
        assert_eq!(r.next_chunk(4).unwrap().unwrap(), rows[..12]);
        assert_eq!(r.next_chunk(4).unwrap().unwrap(), rows[12..24]);
        assert_eq!(r.next_chunk(4).unwrap().unwrap(), rows[24..]);
        assert!(r.next_chunk(4).unwrap().is_none());
        assert_eq!(read_matrix(&path).unwrap().n(), 10);
    }

    #[test]
    fn raw_and_dvecs() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<f32> = (0..12).map(|i| i as f32 - 6.0).collect();
        let raw = dir.path().join("a.f32");
        write_raw(&raw, 4, &rows).unwrap();
        assert_eq!(VectorReader::open(&raw).unwrap().read_all().unwrap(), (4, rows.clone()));
        let dv = dir.path().join("a.dvecs");
        write_vectors(&dv, 4, &rows).unwrap();
        assert_eq!(VectorReader::open(&dv).unwrap().read_all().unwrap(), (4, rows));
    }

    #[test]
    fn rejects_inconsistent_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fvecs");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&2i32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8]);
        bytes.extend_from_slice(&3i32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 4]);
        std::fs::write(&path, &bytes).unwrap();
        let err = VectorReader::open(&path).and_then(|r| r.read_all()).unwrap_err();
        assert!(matches!(err, IkeError::Format(_)), "{err}");

        std::fs::write(&path, [1u8, 2, 3]).unwrap();
        assert!(VectorReader::open(&path).is_err());

        let raw = dir.path().join("bad.f32");
        write_raw(&raw, 2, &[1.0, 2.0]).unwrap();
        std::fs::write(&raw, [0u8; 12]).unwrap();
        assert!(matches!(VectorReader::open(&raw), Err(IkeError::Format(_))));

        let nan = dir.path().join("nan.fvecs");
        write_fvecs(&nan, 1, &[f32::NAN]).unwrap();
        assert!(read_matrix(&nan).is_err());
    }

    #[test]
    fn empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.fvecs");
        std::fs::write(&path, []).unwrap();
        let r = VectorReader::open(&path).unwrap();
        assert_eq!(r.d(), 0);
        assert_eq!(r.read_all().unwrap().1.len(), 0);
        assert!(read_matrix(&path).is_err());
    }
}
