//! Binary tensor container used for checkpoints and encoded-dataset caches.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CAUM"  u32 version  u32 count
//! count × { u16 name_len, name (UTF-8), u8 rank, rank × u64 extent, payload }
//! ```
//!
//! Checkpoint payloads are `f32`. Integer sections set the high bit of the
//! rank byte (`0x80 | rank`) and carry `u32` payloads instead.

use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CAUM";
pub const VERSION: u32 = 1;
const U32_SECTION: u8 = 0x80;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

impl Payload {
    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::U32(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl Entry {
    pub fn f32(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape,
            payload: Payload::F32(data),
        }
    }

    pub fn u32(name: impl Into<String>, shape: Vec<usize>, data: Vec<u32>) -> Self {
        Self {
            name: name.into(),
            shape,
            payload: Payload::U32(data),
        }
    }
}

pub fn encode(entries: &[Entry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::Contract(format!("entry name too long: {}", e.name)));
        }
        if e.shape.is_empty() || e.shape.len() >= U32_SECTION as usize {
            return Err(Error::Contract(format!("bad rank for {}", e.name)));
        }
        if e.shape.iter().product::<usize>() != e.payload.len() {
            return Err(Error::shape("container entry", &e.shape, &[e.payload.len()]));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        let flag = match e.payload {
            Payload::F32(_) => 0,
            Payload::U32(_) => U32_SECTION,
        };
        out.push(flag | e.shape.len() as u8);
        for &x in &e.shape {
            out.extend_from_slice(&(x as u64).to_le_bytes());
        }
        match &e.payload {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {} (need {n} more)", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<Entry>, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let nlen = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| "entry name is not UTF-8".to_string())?
            .to_string();
        let rank_byte = r.u8()?;
        let rank = (rank_byte & !U32_SECTION) as usize;
        if rank == 0 {
            return Err(format!("entry {name} has rank 0"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &x| acc.checked_mul(x))
            .ok_or_else(|| format!("entry {name} extents overflow"))?;
        let raw = r.take(n.checked_mul(4).ok_or("payload overflow")?)?;
        let chunks = raw.chunks_exact(4).map(|c| <[u8; 4]>::try_from(c).unwrap());
        let payload = if rank_byte & U32_SECTION != 0 {
            Payload::U32(chunks.map(u32::from_le_bytes).collect())
        } else {
            Payload::F32(chunks.map(f32::from_le_bytes).collect())
        };
        entries.push(Entry { name, shape, payload });
    }
    if r.pos != bytes.len() {
        return Err(format!(
            "length mismatch: {} trailing bytes after {count} entries",
            bytes.len() - r.pos
        ));
    }
    Ok(entries)
}

pub fn write_container(path: &Path, entries: &[Entry]) -> Result<()> {
    let bytes = encode(entries)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<Vec<Entry>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|m| Error::format(path, m))
}

/// Every parameter as an `f32` entry, in store order.
pub fn params_to_entries(store: &ParamStore) -> Vec<Entry> {
    store
        .iter()
        .map(|(_, e)| {
            Entry::f32(
                e.name.clone(),
                e.value.shape().to_vec(),
                e.value.data().iter().map(|&x| x as f32).collect(),
            )
        })
        .collect()
}

pub fn save_params(store: &ParamStore, path: &Path) -> Result<()> {
    write_container(path, &params_to_entries(store))
}

/// Overwrite the values of an already-constructed store from a checkpoint.
/// Every stored parameter must be present with the same shape.
pub fn load_params(store: &mut ParamStore, path: &Path) -> Result<()> {
    let entries = read_container(path)?;
    let mut found = 0;
    for e in entries {
        let Payload::F32(data) = e.payload else {
            return Err(Error::format(path, format!("{} is not an f32 section", e.name)));
        };
        let Ok(id) = store.id(&e.name) else {
            return Err(Error::format(path, format!("unexpected parameter {}", e.name)));
        };
        if store.value(id).shape() != e.shape.as_slice() {
            return Err(Error::shape("checkpoint load", store.value(id).shape(), &e.shape));
        }
        let t = Tensor::new(e.shape, data.into_iter().map(f64::from).collect())?;
        *store.value_mut(id) = t;
        found += 1;
    }
    if found != store.len() {
        return Err(Error::format(
            path,
            format!("checkpoint has {found} of {} parameters", store.len()),
        ));
    }
    Ok(())
}
