use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::jsonl;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TMEB";
const VERSION: u8 = 0x01;
const HEADER_LEN: usize = 4 + 1 + 4 + 8;
const NORM_TOLERANCE: f64 = 1e-3;

/// Row-major matrix of unit-norm `f32` embeddings with an id → row index.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct IndexLine {
    id: String,
    row: u64,
}

impl EmbeddingMatrix {
    /// Builds a matrix from ids and flat row-major data, checking that ids are
    /// unique and that every row has unit norm (within 1e-3).
    pub fn new(dim: usize, ids: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("embedding dim must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::Format(format!(
                "{} values cannot form {} rows of dim {dim}",
                data.len(),
                ids.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), row).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        for (row, values) in data.chunks_exact(dim).enumerate() {
            let norm = values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::Format(format!(
                    "row {row} ({:?}) has norm {norm}, expected unit length",
                    ids[row]
                )));
            }
        }
        Ok(Self { dim, ids, data, index })
    }

    /// Convenience constructor from `(id, vector)` pairs.
    pub fn from_rows<V: AsRef<[f64]>>(dim: usize, rows: impl IntoIterator<Item = (String, V)>) -> Result<Self> {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (id, v) in rows {
            let v = v.as_ref();
            if v.len() != dim {
                return Err(Error::Format(format!("row {id:?} has dim {}, expected {dim}", v.len())));
            }
            data.extend(v.iter().map(|&x| x as f32));
            ids.push(id);
        }
        Self::new(dim, ids, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&r| self.row(r))
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
}

/// Path of the `<path>.idx.jsonl` sidecar.
pub fn index_path(path: &Path) -> PathBuf {
    let mut s = OsString::from(path.as_os_str());
    s.push(".idx.jsonl");
    PathBuf::from(s)
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dim = u32::try_from(matrix.dim).map_err(|_| Error::Format("dim exceeds u32".into()))?;
    let mut bytes = Vec::with_capacity(HEADER_LEN + matrix.data.len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.push(VERSION);
    bytes.extend_from_slice(&dim.to_le_bytes());
    bytes.extend_from_slice(&(matrix.count() as u64).to_le_bytes());
    for v in &matrix.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    jsonl::write_values(
        &index_path(path),
        matrix.ids.iter().enumerate().map(|(row, id)| IndexLine {
            id: id.clone(),
            row: row as u64,
        }),
    )
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fmt = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < HEADER_LEN {
        return Err(fmt(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fmt("bad magic bytes".into()));
    }
    if bytes[4] != VERSION {
        return Err(fmt(format!("unsupported version {}", bytes[4])));
    }
    let dim = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
    if dim == 0 {
        return Err(fmt("dim is 0".into()));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(dim))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fmt(format!("count {count} overflows")))?;
    if payload.len() < expected {
        return Err(fmt(format!(
            "truncated payload: header claims {count} rows ({expected} bytes), found {} bytes",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(fmt(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let idx_path = index_path(path);
    let mut ids = Vec::with_capacity(count as usize);
    for (line_no, line) in jsonl::read_lines(&idx_path)? {
        let entry: IndexLine = jsonl::parse_line(&idx_path, line_no, &line)?;
        if entry.row != ids.len() as u64 {
            return Err(fmt(format!(
                "index line {line_no} has row {}, expected {}",
                entry.row,
                ids.len()
            )));
        }
        ids.push(entry.id);
    }
    if ids.len() as u64 != count {
        return Err(fmt(format!("index lists {} rows, header claims {count}", ids.len())));
    }
    EmbeddingMatrix::new(dim, ids, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_rows(count: usize, dim: usize, salt: u64) -> EmbeddingMatrix {
        let rows = (0..count).map(|i| {
            let v: Vec<f64> = (0..dim)
                .map(|j| (((i * 31 + j * 7) as u64 ^ salt) % 97) as f64 - 48.0 + 0.5)
                .collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            (format!("id{i}"), v.into_iter().map(|x| x / n).collect::<Vec<_>>())
        });
        EmbeddingMatrix::from_rows(dim, rows).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.tmeb");
        let m = unit_rows(10, 64, 3);
        write_embeddings(&m, &p).unwrap();
        let back = read_embeddings(&p).unwrap();
        assert_eq!(back.ids(), m.ids());
        for r in 0..10 {
            let a: Vec<u32> = m.row(r).iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.row(r).iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert_eq!(back.row_of("id7"), Some(7));
    }

    #[test]
    fn binary_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.tmeb");
        let m = EmbeddingMatrix::from_rows(2, [("x".to_string(), [1.0, 0.0])]).unwrap();
        write_embeddings(&m, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let mut expected = b"TMEB\x01".to_vec();
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&0.0f32.to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(
            fs::read_to_string(index_path(&p)).unwrap(),
            "{\"id\":\"x\",\"row\":0}\n"
        );
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.tmeb");
        write_embeddings(&unit_rows(2, 4, 0), &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] = b'X';
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_embeddings(&p), Err(Error::Format(m)) if m.contains("magic")));
    }

    #[test]
    fn count_beyond_payload_is_truncation_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.tmeb");
        write_embeddings(&unit_rows(4, 8, 1), &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[9..17].copy_from_slice(&5u64.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_embeddings(&p), Err(Error::Format(m)) if m.contains("truncated")));
    }

    #[test]
    fn zero_dim_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.tmeb");
        let mut bytes = b"TMEB\x01".to_vec();
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&0u64.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_embeddings(&p), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_non_unit_rows() {
        let err = EmbeddingMatrix::from_rows(2, [("a".to_string(), [1.0, 1.0])]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn roundtrip_property(count in 0usize..20, dim in 1usize..40, salt in any::<u64>()) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("e.tmeb");
            let q = dir.path().join("f.tmeb");
            let m = unit_rows(count, dim, salt);
            write_embeddings(&m, &p).unwrap();
            write_embeddings(&m, &q).unwrap();
            prop_assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
            prop_assert_eq!(read_embeddings(&p).unwrap(), m);
        }
    }
}
