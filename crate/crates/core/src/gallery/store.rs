//! Binary embedding store, little-endian:
//!
//! ```text
//! "FPES" | version: u16 = 1 | dim: u16 | count: u64
//! count x ( tag: u8 | id_len: u16 | id: [u8; id_len] | dim x f32 )
//! ```
//!
//! Tag codes are 0=O, 1=Y, 2=X, 3=R, 4=M.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Embedding, ModelTag, SubjectId};

pub const MAGIC: &[u8; 4] = b"FPES";
pub const VERSION: u16 = 1;
/// Norm deviation accepted when reading stored embeddings.
pub const STORE_NORM_TOLERANCE: f64 = 1e-4;

const HEADER_LEN: usize = 4 + 2 + 2 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct StoreRecord {
    pub tag: ModelTag,
    pub id: SubjectId,
    pub embedding: Embedding,
}

/// An ordered list of tagged embeddings sharing one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    records: Vec<StoreRecord>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > u16::MAX as usize {
            return Err(Error::Store(format!("dimension {dim} outside 1..=65535")));
        }
        Ok(Self { dim, records: Vec::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[StoreRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<StoreRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, tag: ModelTag, id: SubjectId, embedding: Embedding) -> Result<()> {
        if embedding.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: embedding.dim() });
        }
        if id.as_str().len() > u16::MAX as usize {
            return Err(Error::Store("subject id longer than 65535 bytes".into()));
        }
        self.records.push(StoreRecord { tag, id, embedding });
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let per_record: usize = self.dim * 4 + 3;
        let ids: usize = self.records.iter().map(|r| r.id.as_str().len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + self.records.len() * per_record + ids);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u16).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            out.push(r.tag.code());
            let id = r.id.as_str().as_bytes();
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id);
            for v in r.embedding.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Store("bad magic".into()));
        }
        let version = cur.u16()?;
        if version != VERSION {
            return Err(Error::Store(format!("unsupported version {version}")));
        }
        let dim = cur.u16()? as usize;
        let count = cur.u64()?;
        let mut store = Self::new(dim)?;
        let min_record = 3 + dim * 4;
        let plausible = (bytes.len().saturating_sub(HEADER_LEN) / min_record) as u64;
        if count > plausible {
            return Err(Error::Store(format!("count {count} exceeds the data present")));
        }
        store.records.reserve(count as usize);
        for i in 0..count {
            let code = cur.u8()?;
            let tag = ModelTag::from_code(code)
                .ok_or_else(|| Error::Store(format!("record {i}: unknown tag code {code}")))?;
            let id_len = cur.u16()? as usize;
            let id = std::str::from_utf8(cur.take(id_len)?)
                .map_err(|_| Error::Store(format!("record {i}: id is not UTF-8")))?;
            let id = SubjectId::new(id).map_err(|e| Error::Store(format!("record {i}: {e}")))?;
            let values =
                cur.take(dim * 4)?.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            let embedding = Embedding::from_unit_with_tolerance(values, STORE_NORM_TOLERANCE)
                .map_err(|e| Error::Store(format!("record {i} ({id}): {e}")))?;
            store.records.push(StoreRecord { tag, id, embedding });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Store(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        Ok(store)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Store(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(buf))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(v: &[f32]) -> Embedding {
        Embedding::normalize_f32(v).unwrap()
    }

    #[test]
    fn layout_is_bit_exact() {
        let mut s = EmbeddingStore::new(2).unwrap();
        s.push(ModelTag::R, SubjectId::new("ab").unwrap(), e(&[1.0, 0.0])).unwrap();
        let bytes = s.to_bytes();
        let mut expected = b"FPES".to_vec();
        expected.extend_from_slice(&[1, 0, 2, 0, 1, 0, 0, 0, 0, 0, 0, 0]);
        expected.extend_from_slice(&[3, 2, 0, b'a', b'b']);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&0.0f32.to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(EmbeddingStore::from_bytes(&bytes).unwrap(), s);
    }

    #[test]
    fn reader_validation() {
        let mut s = EmbeddingStore::new(2).unwrap();
        s.push(ModelTag::O, SubjectId::new("a").unwrap(), e(&[0.6, 0.8])).unwrap();
        let good = s.to_bytes();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(EmbeddingStore::from_bytes(&bad).is_err());

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(EmbeddingStore::from_bytes(&bad).is_err());

        let mut bad = good.clone();
        bad.push(0);
        assert!(EmbeddingStore::from_bytes(&bad).unwrap_err().to_string().contains("trailing"));

        assert!(EmbeddingStore::from_bytes(&good[..good.len() - 1]).is_err());

        let mut bad = good.clone();
        bad[16] = 9;
        assert!(EmbeddingStore::from_bytes(&bad).is_err());

        // scale the first value so the norm drifts past tolerance
        let mut bad = good.clone();
        let at = good.len() - 8;
        bad[at..at + 4].copy_from_slice(&0.7f32.to_le_bytes());
        assert!(EmbeddingStore::from_bytes(&bad).unwrap_err().to_string().contains("norm"));

        let mut bad = good.clone();
        bad[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(EmbeddingStore::from_bytes(&bad).is_err());
    }

    #[test]
    fn push_checks_dim() {
        let mut s = EmbeddingStore::new(3).unwrap();
        assert!(s.push(ModelTag::O, SubjectId::new("a").unwrap(), e(&[1.0, 0.0])).is_err());
        assert!(EmbeddingStore::new(0).is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(recs in prop::collection::vec((0u8..5, "[a-z0-9/_-]{1,12}", prop::collection::vec(-1.0f32..1.0, 6)), 0..20)) {
            let mut s = EmbeddingStore::new(6).unwrap();
            for (code, id, raw) in recs {
                if let Ok(emb) = Embedding::normalize_f32(&raw) {
                    s.push(ModelTag::from_code(code).unwrap(), SubjectId::new(id).unwrap(), emb).unwrap();
                }
            }
            let bytes = s.to_bytes();
            let back = EmbeddingStore::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
