//! Binary parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   "PMCK"
//! version u32
//! seed    u64
//! n_meta  u32, then n_meta x (key: u32 len + utf8, value: u32 len + utf8)
//! n_tens  u32, then n_tens x (name: u32 len + utf8, ndim u32, ndim x u32 extent,
//!                             numel x f32 data)
//! ```
//!
//! Entries are written in store order, so identical parameters always
//! produce identical bytes.

use std::fs;
use std::path::Path;

use crate::error::{NumericsError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PMCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub metadata: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

fn err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NumericsError::Checkpoint(msg.into()))
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, seed: u64, metadata: Vec<(String, String)>) -> Self {
        Self {
            version: FORMAT_VERSION,
            seed,
            metadata,
            tensors: store
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &s in t.shape() {
                out.extend_from_slice(&(s as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return err("bad magic");
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return err(format!("unsupported format version {version}"));
        }
        let seed = r.u64()?;
        let n_meta = r.u32()?;
        let mut metadata = Vec::with_capacity(n_meta as usize);
        for _ in 0..n_meta {
            metadata.push((r.string()?, r.string()?));
        }
        let n_tensors = r.u32()?;
        let mut tensors = Vec::with_capacity(n_tensors as usize);
        for _ in 0..n_tensors {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u32().map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return err("trailing bytes");
        }
        Ok(Self {
            version,
            seed,
            metadata,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).or_else(|e| err(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).or_else(|e| err(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Copies every tensor of the store from this checkpoint, by name.
    /// Every store parameter must be present with a matching shape.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let Some(t) = self.tensor(&name) else {
                return err(format!("missing tensor {name}"));
            };
            store.set(id, t.clone())?;
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return err("truncated file");
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).or_else(|_| err("invalid utf-8"))
    }
}
