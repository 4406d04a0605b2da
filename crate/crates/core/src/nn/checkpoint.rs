//! Flat parameter archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SERCKPT\0"
//! version    u32      1
//! seed       u64
//! hash       32 bytes SHA-256 of the metadata text
//! meta_len   u32, then meta_len bytes of UTF-8 metadata (the config)
//! count      u32
//! count × { name_len u32, name bytes, rank u32, rank × u64 dims, f64 values }
//! ```

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use super::{NnError, Tensor};

const MAGIC: &[u8; 8] = b"SERCKPT\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveHeader {
    pub seed: u64,
    pub config_hash: [u8; 32],
    pub metadata: String,
}

impl ArchiveHeader {
    pub fn new(seed: u64, metadata: String) -> Self {
        Self {
            seed,
            config_hash: Sha256::digest(metadata.as_bytes()).into(),
            metadata,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub header: ArchiveHeader,
    pub entries: Vec<(String, Tensor)>,
}

impl Archive {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn write_archive<W: Write>(mut w: W, archive: &Archive) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&archive.header.seed.to_le_bytes())?;
    w.write_all(&archive.header.config_hash)?;
    write_bytes(&mut w, archive.header.metadata.as_bytes())?;
    w.write_all(&(archive.entries.len() as u32).to_le_bytes())?;
    for (name, t) in &archive.entries {
        write_bytes(&mut w, name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_archive<R: Read>(mut r: R) -> Result<Archive, NnError> {
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Archive("not a checkpoint archive".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NnError::Archive(format!("unsupported version {version}")));
    }
    let seed = read_u64(&mut r)?;
    let mut config_hash = [0u8; 32];
    read_exact(&mut r, &mut config_hash)?;
    let metadata = String::from_utf8(read_bytes(&mut r)?)
        .map_err(|_| NnError::Archive("metadata is not UTF-8".into()))?;
    let expected: [u8; 32] = Sha256::digest(metadata.as_bytes()).into();
    if expected != config_hash {
        return Err(NnError::Archive("config hash does not match metadata".into()));
    }
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|_| NnError::Archive("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        read_exact(&mut r, &mut buf)?;
        let data = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    Ok(Archive {
        header: ArchiveHeader {
            seed,
            config_hash,
            metadata,
        },
        entries,
    })
}

fn write_bytes<W: Write>(w: &mut W, b: &[u8]) -> Result<(), NnError> {
    w.write_all(&(b.len() as u32).to_le_bytes())?;
    w.write_all(b)?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), NnError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => NnError::Archive("truncated archive".into()),
        _ => NnError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>, NnError> {
    let n = read_u32(r)? as usize;
    let mut b = vec![0u8; n];
    read_exact(r, &mut b)?;
    Ok(b)
}
