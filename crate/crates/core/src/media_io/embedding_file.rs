//! Per-frame embedding matrices and their on-disk container.
//!
//! Layout (all little-endian):
//!
//! | offset | size        | field                         |
//! |--------|-------------|-------------------------------|
//! | 0      | 4           | magic `RSEM`                  |
//! | 4      | 4           | version `u32` (currently 1)   |
//! | 8      | 4           | rows `n` (`u32`)              |
//! | 12     | 4           | columns `D` (`u32`)           |
//! | 16     | `4 * n * D` | row-major `f32` payload       |
//! | ...    | 4           | provider tag length (`u32`)   |
//! | ...    | len         | provider tag, UTF-8           |

use std::path::Path;

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"RSEM";
pub const EMBEDDING_VERSION: u32 = 1;

pub const TAG_BUILTIN_PIXEL: &str = "builtin-pixel";
pub const TAG_BUILTIN_LEARNED: &str = "builtin-learned";
pub const TAG_EXTERNAL: &str = "external";

/// One `D`-dimensional vector per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
    pub provider_tag: String,
}

impl EmbeddingSet {
    pub fn new(rows: usize, dim: usize, values: Vec<f32>, provider_tag: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimZero);
        }
        if rows == 0 {
            return Err(Error::HeaderMismatch("zero rows".into()));
        }
        if values.len() != rows * dim {
            return Err(Error::HeaderMismatch(format!(
                "{} x {} matrix needs {} values, got {}",
                rows,
                dim,
                rows * dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValues);
        }
        Ok(Self {
            rows,
            dim,
            values,
            provider_tag: provider_tag.into(),
        })
    }

    pub fn from_rows(rows: Vec<Vec<f32>>, provider_tag: impl Into<String>) -> Result<Self> {
        let n = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch("ragged embedding rows".into()));
        }
        Self::new(n, dim, rows.into_iter().flatten().collect(), provider_tag)
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, i: usize) -> Result<&[f32]> {
        if i >= self.rows {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.rows,
            });
        }
        Ok(self.row(i))
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tag = self.provider_tag.as_bytes();
        let mut out = Vec::with_capacity(16 + self.values.len() * 4 + 4 + tag.len());
        out.extend_from_slice(&EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(tag.len() as u32).to_le_bytes());
        out.extend_from_slice(tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::HeaderMismatch(format!(
                "header needs 16 bytes, file has {}",
                bytes.len()
            )));
        }
        if bytes[0..4] != EMBEDDING_MAGIC {
            return Err(Error::HeaderMismatch("bad magic".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let version = word(4);
        if version != EMBEDDING_VERSION as usize {
            return Err(Error::HeaderMismatch(format!("unsupported version {version}")));
        }
        let (rows, dim) = (word(8), word(12));
        if dim == 0 {
            return Err(Error::DimZero);
        }
        let payload = rows
            .checked_mul(dim)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::HeaderMismatch("header overflows".into()))?;
        let tag_at = 16 + payload;
        if bytes.len() < tag_at + 4 {
            return Err(Error::HeaderMismatch(format!(
                "header declares {rows} x {dim} but payload is {} bytes",
                bytes.len().saturating_sub(16)
            )));
        }
        let tag_len = word(tag_at);
        if bytes.len() != tag_at + 4 + tag_len {
            return Err(Error::HeaderMismatch(format!(
                "header declares {rows} x {dim} with a {tag_len}-byte tag, file is {} bytes",
                bytes.len()
            )));
        }
        let values = bytes[16..tag_at]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tag = std::str::from_utf8(&bytes[tag_at + 4..])
            .map_err(|_| Error::HeaderMismatch("provider tag is not UTF-8".into()))?;
        Self::new(rows, dim, values, tag)
    }
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    EmbeddingSet::from_bytes(&std::fs::read(path)?)
}

pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    std::fs::write(path, set.to_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(rows: u32, dim: u32) -> Vec<u8> {
        let mut b = EMBEDDING_MAGIC.to_vec();
        b.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        b.extend_from_slice(&rows.to_le_bytes());
        b.extend_from_slice(&dim.to_le_bytes());
        b
    }

    #[test]
    fn round_trip_three_by_four() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        let values: Vec<f32> = (0..12).map(|i| i as f32 * 0.37 - 1.5).collect();
        let set = EmbeddingSet::new(3, 4, values, TAG_EXTERNAL).unwrap();
        write_embeddings(&path, &set).unwrap();
        let back = read_embeddings(&path).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.row(2), set.row(2));
    }

    #[test]
    fn declared_rows_exceed_payload() {
        let mut b = header(5, 2);
        for i in 0..8 {
            b.extend_from_slice(&(i as f32).to_le_bytes());
        }
        b.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(EmbeddingSet::from_bytes(&b), Err(Error::HeaderMismatch(_))));
    }

    #[test]
    fn zero_dim_header() {
        let mut b = header(3, 0);
        b.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(EmbeddingSet::from_bytes(&b), Err(Error::DimZero)));
    }

    #[test]
    fn tag_survives() {
        let set = EmbeddingSet::new(1, 1, vec![f32::MIN_POSITIVE], "custom/rsfnet-v2").unwrap();
        let back = EmbeddingSet::from_bytes(&set.to_bytes()).unwrap();
        assert_eq!(back.provider_tag, "custom/rsfnet-v2");
        assert_eq!(back.values()[0].to_bits(), f32::MIN_POSITIVE.to_bits());
    }
}
