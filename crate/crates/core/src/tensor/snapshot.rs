//! Binary tensor snapshots.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"SBMT" | version: u32 | dtype tag: u32 | rank: u32 | dims: rank x u64 | scalars
//! ```

use alloc::format;
use alloc::vec::Vec;

use super::Tensor;
use crate::{DType, Error, Real, Result};

pub const MAGIC: &[u8; 4] = b"SBMT";
pub const VERSION: u32 = 1;

pub fn encode<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * t.rank() + T::DTYPE.size() * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&T::DTYPE.tag().to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        x.to_le_bytes(&mut out);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Snapshot(format!("truncated at byte {}", self.pos)))?;
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

/// Decodes a snapshot, converting the stored precision to `T` if needed.
/// Returns the tensor and the number of bytes consumed.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<(Tensor<T>, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let tag = r.u32()?;
    let dtype = DType::from_tag(tag).ok_or_else(|| Error::Snapshot(format!("unknown dtype tag {tag}")))?;
    let rank = r.u32()? as usize;
    if rank > 16 {
        return Err(Error::Snapshot(format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel = 1usize;
    for _ in 0..rank {
        let d = usize::try_from(r.u64()?).map_err(|_| Error::Snapshot("dimension overflow".into()))?;
        numel = numel.checked_mul(d).ok_or_else(|| Error::Snapshot("size overflow".into()))?;
        shape.push(d);
    }
    let width = dtype.size();
    let raw = r.take(numel.checked_mul(width).ok_or_else(|| Error::Snapshot("size overflow".into()))?)?;
    let data: Vec<T> = match dtype {
        DType::F32 => raw.chunks_exact(4).map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()).as_f64())).collect(),
        DType::F64 => raw.chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap()))).collect(),
    };
    Ok((Tensor::new(shape, data)?, r.pos))
}
