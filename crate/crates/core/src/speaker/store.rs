use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{SpeakerEmbedding, SpeakerError};

/// Embeddings of one dimension, keyed by utterance id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingStore {
    dim: Option<usize>,
    records: Vec<SpeakerEmbedding>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SpeakerEmbedding] {
        &self.records
    }

    /// Replaces an existing record with the same id.
    pub fn insert(&mut self, e: SpeakerEmbedding) -> Result<(), SpeakerError> {
        let dim = *self.dim.get_or_insert(e.vector.len());
        if e.vector.len() != dim {
            return Err(SpeakerError::DimMismatch {
                expected: dim,
                got: e.vector.len(),
            });
        }
        if e.vector.iter().any(|v| !v.is_finite()) {
            return Err(SpeakerError::NonFinite(e.utterance_id));
        }
        match self.index.get(&e.utterance_id) {
            Some(&i) => self.records[i] = e,
            None => {
                self.index.insert(e.utterance_id.clone(), self.records.len());
                self.records.push(e);
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.records[i].vector.as_slice())
    }

    pub fn require(&self, id: &str) -> Result<&[f64], SpeakerError> {
        self.get(id).ok_or_else(|| SpeakerError::Missing(id.to_string()))
    }
}

impl FromIterator<SpeakerEmbedding> for Result<EmbeddingStore, SpeakerError> {
    fn from_iter<I: IntoIterator<Item = SpeakerEmbedding>>(iter: I) -> Self {
        let mut s = EmbeddingStore::new();
        for e in iter {
            s.insert(e)?;
        }
        Ok(s)
    }
}

/// `u64 count, u64 dim`, then per record `u32 id length, id bytes, dim × f64`,
/// all little-endian.
pub fn save_store(path: impl AsRef<Path>, store: &EmbeddingStore) -> Result<(), SpeakerError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    w.write_all(&(store.dim.unwrap_or(0) as u64).to_le_bytes())?;
    for r in &store.records {
        w.write_all(&(r.utterance_id.len() as u32).to_le_bytes())?;
        w.write_all(r.utterance_id.as_bytes())?;
        for v in &r.vector {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_store(path: impl AsRef<Path>) -> Result<EmbeddingStore, SpeakerError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let count = read_u64(&mut r)? as usize;
    let dim = read_u64(&mut r)? as usize;
    let mut store = EmbeddingStore::new();
    for _ in 0..count {
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(truncated)?;
        let mut id = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut id).map_err(truncated)?;
        let id = String::from_utf8(id).map_err(|_| SpeakerError::Store("id is not UTF-8".into()))?;
        let mut buf = vec![0u8; 8 * dim];
        r.read_exact(&mut buf).map_err(truncated)?;
        let vector = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.insert(SpeakerEmbedding { utterance_id: id, vector })?;
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(SpeakerError::Store("trailing bytes after last record".into()));
    }
    if store.dim.is_none() && dim > 0 {
        store.dim = Some(dim);
    }
    Ok(store)
}

fn read_u64(r: &mut impl Read) -> Result<u64, SpeakerError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(_: std::io::Error) -> SpeakerError {
    SpeakerError::Store("file ends inside a record".into())
}
