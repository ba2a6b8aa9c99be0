//! Binary checkpoint container.
//!
//! ```text
//! "PPV2CKPT"  version:u32  count:u32
//! per entry:  name_len:u16  name:utf8  ndim:u8  dims:u32*ndim  data:f32*prod(dims)
//! ```
//! All integers and floats little-endian.

use std::fs;
use std::path::Path;

use super::{Network, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PPV2CKPT";
pub const VERSION: u32 = 1;

pub fn encode(params: &ParamStore<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + params.count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        let name_len = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("parameter name too long: {name}")))?;
        let ndim = u8::try_from(t.ndim()).map_err(|_| Error::invalid(format!("too many dims on {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(ndim);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::invalid(format!("dimension too large on {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(what.to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Decodes all entries in file order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic").map_err(|_| Error::BadMagic)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    let count = r.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let what = format!("entry {i}");
        let name_len = u16::from_le_bytes(r.take(2, &what)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(name_len, &what)?)
            .map_err(|_| Error::invalid(format!("entry {i} name is not UTF-8")))?
            .to_string();
        let ndim = r.take(1, &name)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32(&name)? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Truncated(name.clone()))?, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, Tensor::from_parts(shape, data)));
    }
    if r.pos != bytes.len() {
        return Err(Error::invalid("trailing bytes after last checkpoint entry"));
    }
    Ok(entries)
}

/// Replaces the values of `params` with `entries`, which must match names
/// and shapes exactly.
pub fn load_into(params: &mut ParamStore<f32>, entries: Vec<(String, Tensor<f32>)>) -> Result<()> {
    let mut seen = 0;
    for (name, t) in &entries {
        let target = params.get(name).ok_or_else(|| Error::UnexpectedParam(name.clone()))?;
        if target.shape() != t.shape() {
            return Err(Error::CheckpointShape {
                name: name.clone(),
                expected: target.shape().to_vec(),
                found: t.shape().to_vec(),
            });
        }
        seen += 1;
    }
    if seen != params.len() {
        let missing = params
            .names()
            .iter()
            .find(|n| !entries.iter().any(|(e, _)| e == *n))
            .cloned()
            .unwrap_or_default();
        return Err(Error::MissingParam(missing));
    }
    for (name, t) in entries {
        let slot = params.get_mut(&name).expect("checked above");
        slot.data_mut().copy_from_slice(t.data());
        slot.zero_grad();
    }
    Ok(())
}

pub fn save_checkpoint(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(&net.params)?)?;
    Ok(())
}

/// Loads parameter values from `path` into `net`.
pub fn load_checkpoint(net: &mut Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = fs::read(path)?;
    load_into(&mut net.params, decode(&bytes)?)
}
