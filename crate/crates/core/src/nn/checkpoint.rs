//! Versioned binary container for parameters, optimizer state and metadata.
//!
//! Layout (little endian):
//!
//! ```text
//! "CRNCKPT1"  u32 entry_count
//! per entry:  u32 name_len, name bytes, u8 tag, u32 ndim, u64 dims[ndim], payload
//! ```
//!
//! Tags: 4 = f32 values, 8 = f64 values, 16 = u64 values, 32 = UTF-8 text
//! (text uses a single dim holding the byte length).

use std::fs;
use std::path::Path;

use super::adam::AdamState;
use super::params::ParamStore;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CRNCKPT1";

const TAG_U64: u8 = 16;
const TAG_TEXT: u8 = 32;

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U64(Vec<u64>),
    Text(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Entry)>,
}

fn entry_of<T: Scalar>(t: &Tensor<T>) -> Entry {
    match T::DTYPE_TAG {
        4 => Entry::F32(t.cast()),
        _ => Entry::F64(t.cast()),
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, entry: Entry) {
        self.entries.push((name.into(), entry));
    }

    pub fn entries(&self) -> &[(String, Entry)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name) {
            Some(Entry::Text(s)) => Ok(s),
            _ => Err(Error::Checkpoint(format!("missing text entry `{name}`"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.get(name) {
            Some(Entry::U64(v)) => Ok(v),
            _ => Err(Error::Checkpoint(format!("missing integer entry `{name}`"))),
        }
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        match self.get(name) {
            Some(Entry::F32(t)) if T::DTYPE_TAG == 4 => Ok(t.cast()),
            Some(Entry::F64(t)) if T::DTYPE_TAG == 8 => Ok(t.cast()),
            Some(_) => Err(Error::Checkpoint(format!("entry `{name}` has a different element type"))),
            None => Err(Error::Checkpoint(format!("missing tensor entry `{name}`"))),
        }
    }

    /// Adds every parameter as `<prefix><name>`.
    pub fn push_params<T: Scalar>(&mut self, prefix: &str, store: &ParamStore<T>) {
        for (_, p) in store.iter() {
            self.push(format!("{prefix}{}", p.name), entry_of(&p.value));
        }
    }

    /// Overwrites `store` values from `<prefix><name>` entries; shapes must agree.
    pub fn load_params<T: Scalar>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let key = format!("{prefix}{}", store.get(id).name);
            let t: Tensor<T> = self.tensor(&key)?;
            if t.shape() != store.value(id).shape() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter `{key}` has shape {:?} in checkpoint but {:?} in model",
                    t.shape(),
                    store.value(id).shape()
                )));
            }
            store.get_mut(id).value = t;
        }
        Ok(())
    }

    pub fn push_adam<T: Scalar>(&mut self, store: &ParamStore<T>, state: &AdamState<T>) {
        for ((_, p), (m, v)) in store.iter().zip(state.m.iter().zip(&state.v)) {
            self.push(format!("adam/m/{}", p.name), entry_of(m));
            self.push(format!("adam/v/{}", p.name), entry_of(v));
        }
        self.push("adam/t", Entry::U64(vec![state.t]));
    }

    pub fn load_adam<T: Scalar>(&self, store: &ParamStore<T>) -> Result<AdamState<T>> {
        let mut state = AdamState::new(store);
        for (i, (_, p)) in store.iter().enumerate() {
            state.m[i] = self.tensor(&format!("adam/m/{}", p.name))?;
            state.v[i] = self.tensor(&format!("adam/v/{}", p.name))?;
            if state.m[i].shape() != p.value.shape() || state.v[i].shape() != p.value.shape() {
                return Err(Error::ConfigMismatch(format!("optimizer moments for `{}`", p.name)));
            }
        }
        state.t = *self
            .u64s("adam/t")?
            .first()
            .ok_or_else(|| Error::Checkpoint("empty adam/t".into()))?;
        Ok(state)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let (tag, dims): (u8, Vec<usize>) = match entry {
                Entry::F32(t) => (4, t.shape().to_vec()),
                Entry::F64(t) => (8, t.shape().to_vec()),
                Entry::U64(v) => (TAG_U64, vec![v.len()]),
                Entry::Text(s) => (TAG_TEXT, vec![s.len()]),
            };
            out.push(tag);
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match entry {
                Entry::F32(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                Entry::F64(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                Entry::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Entry::Text(s) => out.extend_from_slice(s.as_bytes()),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic header {:?}, expected {:?}",
                String::from_utf8_lossy(magic),
                std::str::from_utf8(MAGIC).unwrap()
            )));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
            let tag = r.take(1)?[0];
            let ndim = r.u32()? as usize;
            let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = dims.iter().product();
            let entry = match tag {
                4 => {
                    let raw = r.take(len.checked_mul(4).ok_or_else(overflow)?)?;
                    Entry::F32(Tensor::from_vec(dims, raw.chunks(4).map(f32::read_le).collect()))
                }
                8 => {
                    let raw = r.take(len.checked_mul(8).ok_or_else(overflow)?)?;
                    Entry::F64(Tensor::from_vec(dims, raw.chunks(8).map(f64::read_le).collect()))
                }
                TAG_U64 => {
                    let raw = r.take(len.checked_mul(8).ok_or_else(overflow)?)?;
                    Entry::U64(raw.chunks(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
                }
                TAG_TEXT => Entry::Text(
                    String::from_utf8(r.take(len)?.to_vec())
                        .map_err(|_| Error::Checkpoint(format!("text entry `{name}` is not UTF-8")))?,
                ),
                other => return Err(Error::Checkpoint(format!("unknown entry tag {other} for `{name}`"))),
            };
            entries.push((name, entry));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn overflow() -> Error {
    Error::Checkpoint("entry size overflows".into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated file: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
