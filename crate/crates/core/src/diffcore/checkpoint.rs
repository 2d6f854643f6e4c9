//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "AMZCKPT\0"
//! version   u32      = 1
//! step      u64      optimizer iteration counter
//! meta_len  u32, meta bytes (UTF-8, usually the JSON config)
//! count     u32
//! entries:  name_len u32, name bytes, dtype u8 (0 = f64, 1 = i64),
//!           ndim u8, dims u64 x ndim, raw values
//! ```
//!
//! Entry names are `param/<name>`, `adam.m/<name>`, `adam.v/<name>` and
//! `buffer/<name>`, written in parameter-insertion then buffer-name order so
//! that saving the same store twice yields identical bytes.

use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"AMZCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum EntryData {
    F64(Vec<f64>),
    I64(Vec<i64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: EntryData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub meta: String,
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, meta: &str) -> Self {
        let mut entries = Vec::new();
        let tensor_entry = |name: String, t: &Tensor| Entry {
            name,
            dims: vec![t.rows() as u64, t.cols() as u64],
            data: EntryData::F64(t.data().to_vec()),
        };
        for pid in store.ids() {
            entries.push(tensor_entry(format!("param/{}", store.name(pid)), store.value(pid)));
        }
        for pid in store.ids() {
            let (m, v) = store.moments(pid);
            entries.push(tensor_entry(format!("adam.m/{}", store.name(pid)), m));
            entries.push(tensor_entry(format!("adam.v/{}", store.name(pid)), v));
        }
        for (name, data) in store.buffers() {
            entries.push(Entry {
                name: format!("buffer/{name}"),
                dims: vec![data.len() as u64],
                data: EntryData::I64(data.clone()),
            });
        }
        Self { step: store.step(), meta: meta.to_string(), entries }
    }

    /// Loads parameter values, optimizer moments, buffers and the step counter
    /// into a store whose parameters were already declared.
    pub fn apply(&self, store: &mut ParamStore) -> Result<()> {
        let find = |name: String| self.entries.iter().find(|e| e.name == name);
        let as_tensor = |e: &Entry| -> Result<Tensor> {
            match (&e.data, e.dims.as_slice()) {
                (EntryData::F64(v), [r, c]) => Ok(Tensor::from_vec(*r as usize, *c as usize, v.clone())),
                _ => Err(Error::Checkpoint(format!("entry `{}` is not a matrix", e.name))),
            }
        };
        let names: Vec<String> = store.ids().map(|p| store.name(p).to_string()).collect();
        for name in names {
            let value = find(format!("param/{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            let m = find(format!("adam.m/{name}")).map(as_tensor).transpose()?;
            let v = find(format!("adam.v/{name}")).map(as_tensor).transpose()?;
            store.restore(&name, as_tensor(value)?, m, v)?;
        }
        for e in &self.entries {
            if let Some(name) = e.name.strip_prefix("buffer/") {
                match &e.data {
                    EntryData::I64(v) => store.set_buffer(name, v.clone()),
                    EntryData::F64(_) => {
                        return Err(Error::Checkpoint(format!("buffer `{name}` has float dtype")))
                    }
                }
            }
        }
        store.set_step(self.step);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            let dtype: u8 = match e.data {
                EntryData::F64(_) => 0,
                EntryData::I64(_) => 1,
            };
            out.push(dtype);
            out.push(e.dims.len() as u8);
            for d in &e.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &e.data {
                EntryData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                EntryData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let step = r.u64()?;
        let meta_len = r.u32()? as usize;
        let meta = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("meta is not UTF-8".into()))?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
            let dtype = r.take(1)?[0];
            let ndim = r.take(1)?[0] as usize;
            let dims: Vec<u64> = (0..ndim).map(|_| r.u64()).collect::<Result<_>>()?;
            let n: usize = dims.iter().map(|d| *d as usize).product();
            let data = match dtype {
                0 => EntryData::F64((0..n).map(|_| r.u64().map(f64::from_bits)).collect::<Result<_>>()?),
                1 => EntryData::I64((0..n).map(|_| r.u64().map(|v| v as i64)).collect::<Result<_>>()?),
                other => return Err(Error::Checkpoint(format!("unknown dtype {other}"))),
            };
            entries.push(Entry { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { step, meta, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
