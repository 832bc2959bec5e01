//! Binary weights container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "LFYW"
//! version u32      1
//! count   u32      entry count
//! entry*  { name_len u16, name utf-8, dtype u8 (0 = f32),
//!           rank u8 (4), dims 4 x u32, data dims-product x f32 LE }
//! ```
//!
//! Entries are written in lexicographic name order, so files are
//! byte-identical across platforms and runs for equal parameter values.
//! Values round-trip exactly at 32-bit precision.

use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LFYW";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

pub fn encode_weights(store: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, tensor) in store.iter() {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(Error::Format(format!("parameter name too long: {name}")));
        }
        out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(DTYPE_F32);
        out.push(4);
        let (n, c, h, w) = tensor.dims();
        for d in [n, c, h, w] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_weights(store: &ParamStore, path: &Path) -> Result<()> {
    super::write_atomic(path, &encode_weights(store)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated weights file: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<ParamStore> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("bad magic: not a weights file".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported weights version {version} (expected {VERSION})"
        )));
    }
    let count = cur.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Format("non-utf8 parameter name".into()))?
            .to_string();
        let dtype = cur.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("unsupported dtype {dtype} for {name}")));
        }
        let rank = cur.u8()?;
        if rank != 4 {
            return Err(Error::Format(format!("unsupported rank {rank} for {name}")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = cur.u32()? as usize;
        }
        let len: usize = dims.iter().product();
        let raw = cur.take(len * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        store.insert(name, Tensor::new((dims[0], dims[1], dims[2], dims[3]), data)?)?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "trailing garbage: {} bytes after last entry",
            bytes.len() - cur.pos
        )));
    }
    Ok(store)
}

pub fn load_weights(path: &Path) -> Result<ParamStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Checks that loaded weights exactly cover the expected parameter set,
/// reporting every name/dims mismatch.
pub fn check_compatible(expected: &ParamStore, loaded: &ParamStore) -> Result<()> {
    let mut problems = Vec::new();
    for (name, tensor) in expected.iter() {
        match loaded.lookup(name) {
            None => problems.push(format!("missing parameter {name}")),
            Some(t) if t.dims() != tensor.dims() => problems.push(format!(
                "dim mismatch for {name}: expected {:?}, found {:?}",
                tensor.dims(),
                t.dims()
            )),
            _ => {}
        }
    }
    for (name, _) in loaded.iter() {
        if !expected.contains(name) {
            problems.push(format!("unexpected parameter {name}"));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Format(format!(
            "weights incompatible with model ({} problems): {}",
            problems.len(),
            problems.join("; ")
        )))
    }
}
