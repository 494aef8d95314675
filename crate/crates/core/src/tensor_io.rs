//! `CAVT` binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"CAVT" | u32 version | u32 rank | rank × u64 dims | Π dims × f32 (row-major)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAGIC: [u8; 4] = *b"CAVT";
pub const VERSION: u32 = 1;

/// Dense f32 tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CavtTensor {
    dims: Vec<usize>,
    values: Vec<f32>,
}

impl CavtTensor {
    pub fn new(dims: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let expected = element_count(&dims)?;
        if expected != values.len() {
            return Err(Error::ShapeMismatch(format!("dims {dims:?} need {expected} values, got {}", values.len())));
        }
        Ok(Self { dims, values })
    }

    pub fn from_real<T: Real>(dims: Vec<usize>, values: &[T]) -> Result<Self> {
        Self::new(dims, values.iter().map(|v| v.as_f32()).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn to_real<T: Real>(&self) -> Vec<T> {
        self.values.iter().map(|&v| T::lit(v as f64)).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to Vec cannot fail");
        out
    }

    /// Parses a complete file image; trailing bytes are rejected.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::TensorFormat("bad magic, expected CAVT".into()));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::TensorFormat(format!("unsupported version {version}")));
        }
        let rank = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        let mut dims = Vec::with_capacity(rank.min(64));
        for _ in 0..rank {
            let d = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
            dims.push(usize::try_from(d).map_err(|_| Error::TensorFormat(format!("dimension {d} too large")))?);
        }
        let count = element_count(&dims)?;
        let byte_len = count.checked_mul(4).ok_or_else(|| Error::TensorFormat("payload size overflows".into()))?;
        let payload = cur.take(byte_len)?;
        if cur.pos != bytes.len() {
            return Err(Error::TensorFormat(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        let values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { dims, values })
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

fn element_count(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::TensorFormat(format!("element count of {dims:?} overflows")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::TensorFormat(format!(
                "truncated: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}
