//! Binary parameter files: an 8-byte magic, a format version, the
//! architecture descriptor, the injection flag, the parameter count, then the
//! parameters as little-endian `f64`.

use std::path::Path;

use super::model::{Architecture, TinyDenoiser};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NDTINYDN";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_bytes(model: &TinyDenoiser) -> Vec<u8> {
    let arch = model.architecture();
    let theta = model.params();
    let mut out = Vec::with_capacity(8 + 4 * 4 + 1 + 8 + 8 * theta.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [arch.base, arch.deep, arch.time_dim] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(model.illum_injection() as u8);
    out.extend_from_slice(&(theta.len() as u64).to_le_bytes());
    for v in theta {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Model("truncated model file".into()))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<TinyDenoiser> {
    let mut r = Reader { buf, at: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Model("not a model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Model(format!("unsupported model format version {version}")));
    }
    let arch = Architecture { base: r.u32()? as usize, deep: r.u32()? as usize, time_dim: r.u32()? as usize };
    let inject = match r.take(1)?[0] {
        0 => false,
        1 => true,
        b => return Err(Error::Model(format!("bad injection flag {b}"))),
    };
    let n = r.u64()? as usize;
    arch.validate().map_err(|e| Error::Model(e.to_string()))?;
    if n != arch.param_count() {
        return Err(Error::Model(format!("header declares {n} parameters, architecture needs {}", arch.param_count())));
    }
    let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Model("parameter count overflow".into()))?)?;
    if r.at != buf.len() {
        return Err(Error::Model("trailing bytes after parameters".into()));
    }
    let theta = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    TinyDenoiser::from_parts(arch, theta, inject)
}

pub fn save_model(model: &TinyDenoiser, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::Write { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn load_model(path: &Path) -> Result<TinyDenoiser> {
    let buf = std::fs::read(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    from_bytes(&buf)
}
